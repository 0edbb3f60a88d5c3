#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ripple/model.hpp"
#include "ripple/tensor.hpp"

namespace ripple::ntk {

// Finite-width NTK estimate (1/n) J J^T on the chosen scalar head, with J
// assembled one row per input from backward passes over all parameters.
ad::Tensor empirical_ntk(const models::Model& model, const ad::Tensor& inputs, int head);

// Extreme eigenvalues of a symmetric matrix via power iteration on K and on
// (lambda_max*I - K). Relative tolerance 1e-10, at most 1e5 iterations.
std::pair<double, double> spectrum(const ad::Tensor& kernel);

// The width-scaled critical rate 2 / ((lambda_min + lambda_max) * n).
double ntk_learning_rate(double lambda_min, double lambda_max, std::int64_t n);

struct RippleDelta {
    std::vector<double> delta;       // f'(W) after T steps minus before
    std::vector<double> loss_curve;  // head-f loss per step
};

// Runs exactly T full-batch GD steps of the squared loss on head f and
// reports the induced change of head f' on the same inputs.
RippleDelta ripple_delta(const models::Model& start, const ad::Tensor& ke_inputs,
                         const std::vector<double>& ke_targets, std::int64_t steps, double eta);

struct NtkRunConfig {
    std::vector<std::int64_t> widths;
    int seeds_per_width = 5;
    int depth = 1;
    std::int64_t input_dim = 16;
    std::int64_t pretrain_size = 32;  // |D_PT|
    std::int64_t edit_size = 8;       // |D_KE|
    std::int64_t pretrain_max_steps = 10000;
    double pretrain_stop_loss = 1e-6;
    std::int64_t ke_steps = 500;  // T, held fixed across widths
    std::uint64_t data_seed = 2024;
    std::uint64_t init_seed = 1;
    models::Activation activation = models::Activation::Tanh;
    std::int64_t decay_fit_steps = 200;

    void validate() const;
};

struct ScanCell {
    std::int64_t width = 0;
    int seed = 0;
    double diff_norm = 0.0;  // || delta(theta_0) - delta(theta_star) ||_2
    double lambda_min = 0.0, lambda_max = 0.0, eta = 0.0;  // KE kernel at theta_0
    bool lambda_flagged = false;                           // lambda_min <= 0
    double decay_c = 0.0, decay_r2 = 0.0;  // exp fit of the theta_star KE loss curve
    double pt_lambda_min = 0.0, pt_lambda_max = 0.0, pt_eta = 0.0;
    std::int64_t pretrain_steps = 0;
    std::string pretrain_stop;
    double pretrain_final_loss = 0.0;
    std::vector<double> delta_star;  // Delta_f'(W; theta_star, T)
    double delta_star_norm = 0.0;
};

struct FitResult {
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  // sum of squared residuals
};

struct ScanResult {
    NtkRunConfig config;
    std::vector<ScanCell> cells;
    std::map<std::int64_t, double> corollary_norm;  // per width: ||mean_seeds delta_star||
    FitResult fit;                                  // log-log fit over all (width, diff_norm)
};

// Full paired experiment. Cells are independent; `threads` > 1 runs them in
// parallel with results keyed by cell, so output is order-independent.
ScanResult width_scan(const NtkRunConfig& config, int threads = 1);

FitResult fit_loglog_slope(const std::vector<std::pair<double, double>>& size_norm_pairs);

struct ExpFit {
    double c = 0.0;
    double r2 = 0.0;
    std::int64_t excluded = 0;  // non-positive losses dropped from the fit
};

ExpFit fit_exp_decay(const std::vector<double>& losses);

struct NtkData {
    ad::Tensor pretrain_inputs;   // unit-sphere rows
    std::vector<double> pretrain_targets;
    ad::Tensor edit_inputs;
    std::vector<double> edit_targets;
};

NtkData make_ntk_data(const NtkRunConfig& config);

// CSV/JSON emission per the scan interface.
void write_scan_csv(std::ostream& out, const ScanResult& result);
std::string scan_summary_json(const ScanResult& result, double slope_lo = -0.75, double slope_hi = -0.25);

}  // namespace ripple::ntk
