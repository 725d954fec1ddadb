// JSON views of the configuration structs. Readers apply the keys present in
// the object onto a base value and reject unknown keys.
#pragma once

#include <string>

#include <json.hpp>

#include "amgs/nlp.hpp"
#include "amgs/transcribe.hpp"

namespace amgs {

using Json = nlohmann::ordered_json;

inline constexpr const char* kCodeVersion = "amgs 0.1.0";

Json to_json(const SystemParams& p);
Json to_json(const SpiralConfig& s);
Json to_json(const ProblemSpec& s);
Json to_json(const SolverConfig& c);

void apply_json(const Json& j, SystemParams& p, const std::string& where = "params");
void apply_json(const Json& j, SpiralConfig& s, const std::string& where = "spiral");
void apply_json(const Json& j, ProblemSpec& s, const std::string& where = "problem");
void apply_json(const Json& j, SolverConfig& c, const std::string& where = "solver");

// Reads a JSON file; kIo when unreadable, kParse with the parser message otherwise.
Json read_json_file(const std::string& path);
// Writes through a temporary file and rename.
void write_text_atomic(const std::string& path, const std::string& text);

// FNV-1a of the bytes, as 16 hex digits.
std::string fingerprint(const std::string& bytes);
std::string file_fingerprint(const std::string& path);

}  // namespace amgs
