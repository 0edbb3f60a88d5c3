#include <doctest.h>

#include <cmath>

#include "ripple/ntk.hpp"
#include "test_support.hpp"

using namespace ripple;
using test_support::jacobi_eigenvalues;
using test_support::random_tensor;

namespace {

models::Model small_mlp(std::int64_t width, std::uint64_t seed,
                        models::Activation act = models::Activation::Tanh) {
    models::MlpConfig cfg;
    cfg.input_dim = 4;
    cfg.width = width;
    cfg.depth = 1;
    cfg.activation = act;
    return models::init_model(cfg, seed);
}

ntk::NtkRunConfig small_scan_config() {
    ntk::NtkRunConfig cfg;
    cfg.widths = {8, 16};
    cfg.seeds_per_width = 2;
    cfg.input_dim = 4;
    cfg.pretrain_size = 6;
    cfg.edit_size = 3;
    cfg.pretrain_max_steps = 400;
    cfg.ke_steps = 40;
    cfg.decay_fit_steps = 40;
    cfg.data_seed = 31;
    cfg.init_seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("spectrum: identity, diagonal, and a random matrix against the Jacobi oracle") {
    ad::Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    auto [lo_i, hi_i] = ntk::spectrum(eye);
    CHECK(lo_i == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(hi_i == doctest::Approx(1.0).epsilon(1e-10));

    ad::Tensor diag({2, 2});
    diag.at(0, 0) = 1.0;
    diag.at(1, 1) = 4.0;
    auto [lo_d, hi_d] = ntk::spectrum(diag);
    CHECK(lo_d == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(hi_d == doctest::Approx(4.0).epsilon(1e-9));

    Rng rng(12);
    ad::Tensor sym({8, 8});
    for (int i = 0; i < 8; ++i)
        for (int j = i; j < 8; ++j) {
            const double v = rng.normal();
            sym.at(i, j) = v;
            sym.at(j, i) = v;
        }
    const auto eig = jacobi_eigenvalues(sym);
    auto [lo, hi] = ntk::spectrum(sym);
    // power iteration reaches the largest magnitude; compare against the oracle
    CHECK(std::abs(hi - eig.back()) < 1e-8 * std::max(1.0, std::abs(eig.back())));
    CHECK(std::abs(lo - eig.front()) < 1e-8 * std::max(1.0, std::abs(eig.front())));

    CHECK_THROWS_AS((void)ntk::spectrum(random_tensor({3, 3}, rng)), std::invalid_argument);
}

TEST_CASE("ntk_learning_rate implements 2/((lmin+lmax)n)") {
    CHECK(ntk::ntk_learning_rate(1.0, 3.0, 100) == doctest::Approx(0.005).epsilon(1e-15));
    CHECK(ntk::ntk_learning_rate(2.0, 2.0, 10) == doctest::Approx(1.0 / 20.0).epsilon(1e-15));
    CHECK(ntk::ntk_learning_rate(1.0, 3.0, 200) ==
          doctest::Approx(0.5 * ntk::ntk_learning_rate(1.0, 3.0, 100)).epsilon(1e-15));
    CHECK_THROWS_AS((void)ntk::ntk_learning_rate(0.0, 1.0, 10), std::invalid_argument);
    CHECK_THROWS_AS((void)ntk::ntk_learning_rate(-0.5, 1.0, 10), std::invalid_argument);
}

TEST_CASE("empirical_ntk: definition on one input, symmetry, PSD, finite-difference cross-check") {
    const models::Model m = small_mlp(24, 3);
    Rng rng(5);
    ad::Tensor x = random_tensor({5, 4}, rng, 0.7);

    const ad::Tensor k = ntk::empirical_ntk(m, x, 0);
    REQUIRE(k.shape == ad::Shape{5, 5});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(k.at(i, j) == k.at(j, i));

    const auto eig = jacobi_eigenvalues(k);
    CHECK(eig.front() >= -1e-10);

    // single input: the 1x1 kernel is ||grad f||^2 / n, checked against a
    // finite-difference Jacobian row
    ad::Tensor x0({1, 4});
    std::copy_n(x.data.data(), 4, x0.data.data());
    const ad::Tensor k1 = ntk::empirical_ntk(m, x0, 0);
    const ad::GradientVector fd = ad::finite_difference_gradient(
        [&](const ad::NamedParams& p) {
            models::Model probe = m;
            probe.params = p;
            return models::mlp_forward(probe, x0).at(0, 0);
        },
        m.params, 1e-5);
    double fd_sq = 0.0;
    for (double v : fd.values) fd_sq += v * v;
    CHECK(std::abs(k1.at(0, 0) - fd_sq / 24.0) < 1e-6 * std::max(1.0, std::abs(k1.at(0, 0))));

    // full kernel against the finite-difference Jacobian on a second head
    const ad::Tensor k_head1 = ntk::empirical_ntk(m, x, 1);
    for (int i = 0; i < 5; ++i) CHECK(k_head1.at(i, i) > 0.0);
}

TEST_CASE("ripple_delta: T=0 and eta=0 produce exactly zero deltas") {
    const models::Model m = small_mlp(16, 9);
    Rng rng(10);
    const ad::Tensor w = random_tensor({3, 4}, rng);
    const std::vector<double> z = {0.2, -0.4, 0.9};

    const ntk::RippleDelta none = ntk::ripple_delta(m, w, z, 0, 0.05);
    for (double d : none.delta) CHECK(d == 0.0);
    CHECK(none.loss_curve.empty());

    const ntk::RippleDelta frozen = ntk::ripple_delta(m, w, z, 25, 0.0);
    for (double d : frozen.delta) CHECK(d == 0.0);
    CHECK(frozen.loss_curve.size() == 25);
    CHECK(frozen.loss_curve.front() == frozen.loss_curve.back());
}

TEST_CASE("fit_loglog_slope: exact powers, constants, noise band, guards") {
    std::vector<std::pair<double, double>> exact;
    for (double n : {64.0, 128.0, 256.0, 512.0}) exact.emplace_back(n, 1.0 / std::sqrt(n));
    const ntk::FitResult fit = ntk::fit_loglog_slope(exact);
    CHECK(fit.slope == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(fit.residual < 1e-20);

    std::vector<std::pair<double, double>> flat;
    for (double n : {64.0, 128.0, 256.0}) flat.emplace_back(n, 0.37);
    CHECK(ntk::fit_loglog_slope(flat).slope == doctest::Approx(0.0).epsilon(1e-12));

    Rng rng(77);
    std::vector<std::pair<double, double>> noisy;
    for (double n : {64.0, 128.0, 256.0, 512.0, 1024.0})
        for (int s = 0; s < 4; ++s)
            noisy.emplace_back(n, (1.0 / std::sqrt(n)) * (1.0 + 0.1 * (2.0 * rng.uniform() - 1.0)));
    const double slope = ntk::fit_loglog_slope(noisy).slope;
    CHECK(slope >= -0.6);
    CHECK(slope <= -0.4);

    CHECK_THROWS_AS((void)ntk::fit_loglog_slope({{64.0, 0.1}}), std::invalid_argument);
    CHECK_THROWS_AS((void)ntk::fit_loglog_slope({{64.0, 0.1}, {64.0, 0.2}}), std::invalid_argument);
    CHECK_THROWS_AS((void)ntk::fit_loglog_slope({{64.0, 0.1}, {128.0, 0.0}}), std::invalid_argument);
}

TEST_CASE("fit_exp_decay: synthetic exponential, constants, exclusions") {
    std::vector<double> losses;
    for (int t = 0; t < 60; ++t) losses.push_back(std::exp(-0.3 * t));
    const ntk::ExpFit fit = ntk::fit_exp_decay(losses);
    CHECK(fit.c == doctest::Approx(0.3).epsilon(1e-10));
    CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.excluded == 0);

    const ntk::ExpFit flat = ntk::fit_exp_decay(std::vector<double>(20, 0.8));
    CHECK(flat.c == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(flat.r2 == doctest::Approx(1.0));

    std::vector<double> with_zeros = losses;
    with_zeros[5] = 0.0;
    with_zeros[9] = -1.0;
    CHECK(ntk::fit_exp_decay(with_zeros).excluded == 2);

    CHECK_THROWS_AS((void)ntk::fit_exp_decay({1.0, 0.5}), std::invalid_argument);
}

TEST_CASE("width_scan: deterministic across runs and thread counts, paired contract") {
    const ntk::NtkRunConfig cfg = small_scan_config();
    const ntk::ScanResult a = ntk::width_scan(cfg, 1);
    const ntk::ScanResult b = ntk::width_scan(cfg, 2);

    REQUIRE(a.cells.size() == 4);
    REQUIRE(b.cells.size() == 4);
    for (size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].diff_norm == b.cells[i].diff_norm);
        CHECK(a.cells[i].eta == b.cells[i].eta);
        CHECK(a.cells[i].delta_star == b.cells[i].delta_star);
        CHECK(a.cells[i].lambda_min > 0.0);
        CHECK_FALSE(a.cells[i].lambda_flagged);
    }
    CHECK(a.fit.slope == b.fit.slope);
    CHECK(a.corollary_norm == b.corollary_norm);

    // config validation guards
    ntk::NtkRunConfig bad = cfg;
    bad.widths = {8};
    CHECK_THROWS_AS((void)ntk::width_scan(bad, 1), std::invalid_argument);
    bad.widths = {16, 8};
    CHECK_THROWS_AS((void)ntk::width_scan(bad, 1), std::invalid_argument);
}

TEST_CASE("make_ntk_data: unit-sphere rows, bounded targets, determinism") {
    const ntk::NtkRunConfig cfg = small_scan_config();
    const ntk::NtkData d1 = ntk::make_ntk_data(cfg);
    const ntk::NtkData d2 = ntk::make_ntk_data(cfg);
    CHECK(d1.pretrain_inputs.data == d2.pretrain_inputs.data);
    CHECK(d1.edit_targets == d2.edit_targets);
    for (std::int64_t i = 0; i < d1.pretrain_inputs.shape[0]; ++i) {
        double n = 0.0;
        for (std::int64_t j = 0; j < cfg.input_dim; ++j)
            n += d1.pretrain_inputs.at(i, j) * d1.pretrain_inputs.at(i, j);
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (double z : d1.pretrain_targets) {
        CHECK(z >= -1.0);
        CHECK(z <= 1.0);
    }
}
