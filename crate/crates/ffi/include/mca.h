#ifndef MCA_H
#define MCA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum McaStatus {
  MCA_STATUS_OK = 0,
  MCA_STATUS_NULL_POINTER = 1,
  MCA_STATUS_INVALID_ARGUMENT = 2,
  MCA_STATUS_LENGTH_MISMATCH = 3,
  // Non-finite state, loss or gradient.
  MCA_STATUS_NUMERICAL = 4,
  // Degenerate observations (constant or zero-mean).
  MCA_STATUS_DEGENERATE = 5,
  // A panic was caught at the boundary.
  MCA_STATUS_INTERNAL = 6,
} McaStatus;

// Node roles accepted by [`mca_model_set_node_scaling`].
typedef enum McaNodeRole {
  MCA_NODE_ROLE_SOIL = 0,
  MCA_NODE_ROLE_ROUTING = 1,
  MCA_NODE_ROLE_GROUNDWATER = 2,
} McaNodeRole;

// Opaque model handle.
typedef struct McaModel McaModel;

typedef struct McaKge {
  double alpha;
  double beta;
  // Linear correlation.
  double rho;
  double kge;
  double kge_ss;
} McaKge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays valid
// until the next failing call on the same thread.
const char *mca_last_error(void);

// Creates a model from a variant label such as `"MA5BP2"` or `"MA1-const"`.
// Returns NULL on failure. Initial states are zero and no state scaling is set.
//
// # Safety
// `variant` must be NULL or a valid NUL-terminated string.
struct McaModel *mca_model_new(const char *variant);

// # Safety
// `model` must be NULL or a handle from [`mca_model_new`] that has not been freed.
void mca_model_free(struct McaModel *model);

// Number of raw parameters, 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t mca_model_param_count(const struct McaModel *model);

// Number of storage nodes (the length of the initial-state vector), 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t mca_model_node_count(const struct McaModel *model);

// Sets the mean and standard deviation used to standardise one node's state.
//
// # Safety
// `model` must be NULL or a live handle.
enum McaStatus mca_model_set_node_scaling(struct McaModel *model,
                                          enum McaNodeRole role,
                                          double mean,
                                          double std);

// Sets the precipitation maximum and PET mean/std used by input-dependent gates.
//
// # Safety
// `model` must be NULL or a live handle.
enum McaStatus mca_model_set_forcing_scaling(struct McaModel *model,
                                             double precip_max,
                                             double pet_mean,
                                             double pet_std);

// Sets the initial state (mm) of every node, in node order.
//
// # Safety
// `model` must be NULL or a live handle; `init` must point to `n` readable doubles.
enum McaStatus mca_model_set_init_state(struct McaModel *model, const double *init, size_t n);

// Writes a seeded random parameter vector.
//
// # Safety
// `model` must be NULL or a live handle; `out` must point to `n` writable doubles.
enum McaStatus mca_model_init_params(const struct McaModel *model,
                                     uint64_t seed,
                                     double *out,
                                     size_t n);

// Simulates `n_steps` days and writes the streamflow.
//
// # Safety
// `model` must be NULL or a live handle; `params` must hold `n_params` doubles;
// `precip`, `pet` and `streamflow` must each hold `n_steps` doubles.
enum McaStatus mca_simulate(const struct McaModel *model,
                            const double *params,
                            size_t n_params,
                            const double *precip,
                            const double *pet,
                            size_t n_steps,
                            double *streamflow);

// Loss 1 - KGE over the steps whose observation is finite (NaN marks steps to skip)
// and its gradient with respect to every raw parameter.
//
// # Safety
// `model` must be NULL or a live handle; `params` and `grad` must hold `n_params`
// doubles; `precip`, `pet` and `obs` must hold `n_steps` doubles; `loss` must be writable.
enum McaStatus mca_loss_gradient(const struct McaModel *model,
                                 const double *params,
                                 size_t n_params,
                                 const double *precip,
                                 const double *pet,
                                 const double *obs,
                                 size_t n_steps,
                                 double *loss,
                                 double *grad);

// KGE components of a simulated against an observed series.
//
// # Safety
// `sim` and `obs` must hold `n` doubles; `out` must be writable.
enum McaStatus mca_kge(const double *sim, const double *obs, size_t n, struct McaKge *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCA_H */
