// Named workflows, each driven by one JSON config: halo, manifold, scan,
// datagen, train, sample, bench, export and the end-to-end pipeline. Every
// artifact they write carries the effective config.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "amgs/config.hpp"

namespace amgs {

using WorkflowLog = std::function<void(const std::string&)>;

std::vector<std::string> workflow_names();

// Complete default config of a workflow; every accepted key appears here.
Json workflow_defaults(const std::string& name);

// Overlays `overrides` onto `base` key by key. Keys absent from base raise
// kParse naming the full path; objects merge recursively, other values replace.
Json merge_config(const Json& base, const Json& overrides, const std::string& where = "config");

// Merges config onto the defaults, validates it and, unless dry_run, runs the
// workflow. Returns {"command", "config", "outputs", ...results}.
Json run_workflow(const std::string& name, const Json& config, bool dry_run, const WorkflowLog& log = {});

}  // namespace amgs
