/* C interface of the amgs library. Every call returns an amgs_status; on
 * failure amgs_last_error() holds a message for the calling thread. Strings
 * returned through char** are owned by the caller and released with
 * amgs_free_string. Matrices are column-major unless stated otherwise. */
#ifndef AMGS_H
#define AMGS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum amgs_status {
  AMGS_OK = 0,
  AMGS_ERR_INVALID_ARGUMENT = 1,
  AMGS_ERR_DOMAIN = 2,
  AMGS_ERR_SINGULARITY = 3,
  AMGS_ERR_STEP_UNDERFLOW = 4,
  AMGS_ERR_MASS_FLOOR = 5,
  AMGS_ERR_THRUST_BOUND = 6,
  AMGS_ERR_NON_CONVERGENCE = 7,
  AMGS_ERR_EVALUATION_FAILURE = 8,
  AMGS_ERR_IO = 9,
  AMGS_ERR_PARSE = 10,
  AMGS_ERR_HEADER_MISMATCH = 11,
  AMGS_ERR_NON_FINITE = 12,
  AMGS_ERR_INTERNAL = 99
} amgs_status;

const char* amgs_version(void);
const char* amgs_status_name(amgs_status status);
const char* amgs_last_error(void);
void amgs_free_string(char* s);

/* ---- workflows: JSON config in, JSON result out ---- */

typedef void (*amgs_log_fn)(const char* line, void* user);

/* Names separated by spaces. */
amgs_status amgs_workflow_names(char** names_out);
amgs_status amgs_workflow_defaults(const char* name, char** json_out);
/* Overlays config_json onto another config; unknown keys fail with AMGS_ERR_PARSE. */
amgs_status amgs_config_merge(const char* base_json, const char* overrides_json, char** json_out);
amgs_status amgs_workflow_run(const char* name, const char* config_json, int dry_run, amgs_log_fn log,
                              void* user, char** result_json);

/* ---- dynamics (normalized Earth-Moon units) ---- */

amgs_status amgs_default_params(char** json_out);
/* Energy of a 6-state; params_json may be NULL for the defaults. */
amgs_status amgs_energy(const char* params_json, const double state[6], double* energy);
/* which in 1..5. */
amgs_status amgs_lagrange_point(const char* params_json, int which, double position[3]);
/* Ballistic flow over t with its state transition matrix (6x6, column-major); stm may be NULL. */
amgs_status amgs_propagate(const char* params_json, const double state[6], double t, double tol, double out[6],
                           double* stm);

/* ---- halo orbits and manifolds ---- */

typedef struct amgs_halo amgs_halo;

double amgs_energy_from_alpha(double alpha);
amgs_status amgs_halo_create(const char* params_json, double energy, amgs_halo** out);
void amgs_halo_free(amgs_halo* h);
amgs_status amgs_halo_period(const amgs_halo* h, double* period);
amgs_status amgs_halo_energy(const amgs_halo* h, double* energy);
amgs_status amgs_halo_crossing_state(const amgs_halo* h, double state[6]);
/* Terminal state of the stable-manifold arc at phase t1 after a backward coast t2. */
amgs_status amgs_halo_manifold_state(const amgs_halo* h, double t1, double t2, double eps_mag, int branch_sign,
                                     double state[6]);

/* ---- transcribed problems ---- */

typedef struct amgs_problem amgs_problem;

amgs_status amgs_problem_create(const char* spec_json, amgs_problem** out);
void amgs_problem_free(amgs_problem* p);
amgs_status amgs_problem_dim(const amgs_problem* p, int* dim);
amgs_status amgs_problem_bounds(const amgs_problem* p, double* lower, double* upper);
/* residual: position (3), velocity (3), mass in kg (1). */
amgs_status amgs_problem_evaluate(const amgs_problem* p, const double* x, double* cost, double residual[7]);
/* cost_gradient has dim entries; jacobian is 7 x dim, column-major. */
amgs_status amgs_problem_derivatives(const amgs_problem* p, const double* x, double* cost_gradient,
                                     double* jacobian);
/* Result JSON holds status, x_final, objective, residuals, iterations and wall time. */
amgs_status amgs_problem_solve(const amgs_problem* p, const double* x0, const char* solver_json, char** result_json);
amgs_status amgs_sample_uniform(const amgs_problem* p, uint64_t seed, double* x);

/* ---- datasets ---- */

typedef struct amgs_dataset amgs_dataset;

amgs_status amgs_dataset_read(const char* path, int permissive, amgs_dataset** out);
void amgs_dataset_free(amgs_dataset* d);
amgs_status amgs_dataset_size(const amgs_dataset* d, size_t* n);
amgs_status amgs_dataset_dim(const amgs_dataset* d, int* dim);
amgs_status amgs_dataset_header(const amgs_dataset* d, char** json_out);
/* status: 0 failed, 1 feasible, 2 optimal. Any output pointer may be NULL. */
amgs_status amgs_dataset_record(const amgs_dataset* d, size_t i, double* alpha, double* x, double* objective,
                                int* status);
amgs_status amgs_dataset_filter(const amgs_dataset* d, double keep_fraction, amgs_dataset** out);
amgs_status amgs_dataset_write(const amgs_dataset* d, const char* path);
/* Segment x bin percentages, row-major n_segments x n_bins. */
amgs_status amgs_dataset_throttle_density(const amgs_dataset* d, int n_bins, double* out);

/* ---- diffusion models ---- */

typedef struct amgs_model amgs_model;

/* Trains on all records of the dataset. curve_csv may be NULL. */
amgs_status amgs_model_train(const amgs_dataset* d, const char* train_json, const char* curve_csv, amgs_model** out);
amgs_status amgs_model_load(const char* path, amgs_model** out);
amgs_status amgs_model_save(const amgs_model* m, const char* path);
void amgs_model_free(amgs_model* m);
amgs_status amgs_model_dim(const amgs_model* m, int* dim);
/* lower/upper may both be NULL for unclipped output; out is dim x n. */
amgs_status amgs_model_sample(const amgs_model* m, double alpha, double guidance, int n, uint64_t seed,
                              const double* lower, const double* upper, double* out, int* out_of_box);
/* x_t and out are dim x n in normalized units. */
amgs_status amgs_model_guided_noise(const amgs_model* m, const double* x_t, int n, int t, double alpha,
                                    double guidance, double* out);

#ifdef __cplusplus
}
#endif

#endif
