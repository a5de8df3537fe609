#ifndef POSECERT_POSECERT_H
#define POSECERT_POSECERT_H

#include <stddef.h>
#include <stdint.h>

#if defined(POSECERT_BUILDING)
#define PC_API __attribute__((visibility("default")))
#else
#define PC_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pc_status {
  PC_OK = 0,
  PC_E_INVALID_ARGUMENT = 1,
  PC_E_IO = 2,
  PC_E_PARSE = 3,
  PC_E_SHAPE = 4,
  PC_E_NUMERIC = 5,
  PC_E_GEOMETRY = 6,
  PC_E_INFEASIBLE = 7,
  PC_E_UNSUPPORTED = 8,
  PC_E_INTERNAL = 9
} pc_status;

typedef struct pc_model pc_model;
typedef struct pc_tensor pc_tensor;

/* Message of the last failed call on this thread; empty after a success. */
PC_API const char* pc_last_error(void);
PC_API const char* pc_version(void);

/* Strings returned through char** out-parameters are owned by the caller. */
PC_API void pc_string_free(char* s);

/* Models */
PC_API pc_status pc_model_load(const char* manifest_path, const char* weights_path, pc_model** out);
PC_API pc_status pc_model_save(const pc_model* m, const char* manifest_path, const char* weights_path);
PC_API void pc_model_free(pc_model* m);
PC_API pc_status pc_model_layer_count(const pc_model* m, size_t* out);
/* Copies up to `cap` dims; `rank` receives the full rank. */
PC_API pc_status pc_model_input_shape(const pc_model* m, int64_t* dims, size_t cap, size_t* rank);
PC_API pc_status pc_model_output_shape(const pc_model* m, int64_t* dims, size_t cap, size_t* rank);
PC_API pc_status pc_model_run(const pc_model* m, const float* input, size_t input_len, float* output,
                              size_t output_cap, size_t* output_len);

/* Tensors: PCTN files or binary PPM images. */
PC_API pc_status pc_tensor_load(const char* path, pc_tensor** out);
PC_API pc_status pc_tensor_create(const int64_t* dims, size_t rank, const float* data, pc_tensor** out);
PC_API pc_status pc_tensor_save(const pc_tensor* t, const char* path);
PC_API void pc_tensor_free(pc_tensor* t);
PC_API pc_status pc_tensor_shape(const pc_tensor* t, int64_t* dims, size_t cap, size_t* rank);
PC_API const float* pc_tensor_data(const pc_tensor* t, size_t* len);
/* Perturbation described as JSON, e.g. {"kind":"brightness","b":2}. */
PC_API pc_status pc_tensor_perturb(const pc_tensor* image, const char* perturbation_json, pc_tensor** out);

/* Pose pipeline, JSON in and out. Scenes use {"K","points3d","points2d","pose"}. */
PC_API pc_status pc_pnp(const char* scene_json, char** pose_json);
/* Keypoint tolerance polytope for the pose budget (eps_r_deg, eps_t). */
PC_API pc_status pc_sensitivity(const char* scene_json, const double eps_r_deg[3], const double eps_t[3],
                                char** polytope_json);
PC_API pc_status pc_allocate(const char* polytope_json, double w1, double w2, double kappa, int cap,
                             char** thresholds_json);

/* Proxy model for a target (head is stripped) and the matching output spec.
   `info_json` receives {"sidecar": ..., "spec": ..., "skipped": [...]}. */
PC_API pc_status pc_proxy_build(const pc_model* target, const char* scene_json, const char* thresholds_json,
                                pc_model** proxy, char** info_json);

/* Verification over the convex hull of vertices[0] (seed) and vertices[1..n-1].
   `preprocess_scale` / `preprocess_shift` are applied to every vertex first. */
PC_API pc_status pc_verify(const pc_model* proxy, const pc_tensor* const* vertices, size_t n_vertices,
                           const char* spec_json, double preprocess_scale, double preprocess_shift, int budget,
                           int workers, uint64_t seed, char** result_json);

/* Symmetry statistics of each softmax heatmap of `target` on `input`. */
PC_API pc_status pc_heatmap_stats(const pc_model* target, const pc_tensor* input, char** stats_json);

/* {"soundness": ..., "completeness": ...} Monte Carlo ratios for allocated thresholds. */
PC_API pc_status pc_monte_carlo(const char* scene_json, const char* thresholds_json, const double eps_r_deg[3],
                                const double eps_t[3], int64_t samples, uint64_t seed, int workers,
                                char** result_json);

/* Full pipeline from a config document; relative paths resolve against base_dir. */
PC_API pc_status pc_certify(const char* config_json, const char* base_dir, char** report_json);
/* PC_OK for a valid report, PC_E_PARSE otherwise with the reason in `why` (may be NULL). */
PC_API pc_status pc_report_validate(const char* report_json, char** why);
PC_API pc_status pc_report_text(const char* report_json, char** text);

/* Writes a small synthetic certification problem (model, weights, image, scene, config.json) into `dir`. */
PC_API pc_status pc_write_toy_problem(const char* dir, uint64_t seed, int brightness, char** config_json);

#ifdef __cplusplus
}
#endif

#endif
