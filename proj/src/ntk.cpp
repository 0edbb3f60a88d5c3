#include "ripple/ntk.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "ripple/rng.hpp"
#include "ripple/util.hpp"

namespace ripple::ntk {

using nlohmann::ordered_json;

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

ad::Tensor empirical_ntk(const models::Model& model, const ad::Tensor& inputs, int head) {
    require(model.is_mlp(), "empirical_ntk: MLP model required");
    require(inputs.rank() == 2 && inputs.shape[0] >= 1, "empirical_ntk: need at least one input row");
    require(head == 0 || head == 1, "empirical_ntk: head must be 0 (f) or 1 (f')");
    const std::int64_t m = inputs.shape[0];
    const std::int64_t d = inputs.shape[1];
    const double n = static_cast<double>(model.mlp().width);

    // One Jacobian row per input, over all shared parameters.
    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) {
        ad::Tensor x({1, d});
        std::copy_n(inputs.data.data() + i * d, d, x.data.data());
        ad::Tape tape;
        models::LeafMap leaves;
        ad::Value out = models::build_mlp_graph(tape, model, x, leaves, /*with_grad=*/true);
        ad::Value scalar = tape.sum(tape.slice_cols(out, head, head + 1));
        tape.backward(scalar);
        ad::NamedParams grads;
        for (const auto& [name, tensor] : model.params) {
            auto it = leaves.find(name);
            if (it != leaves.end() && tape.has_grad(it->second))
                grads.emplace(name, tape.grad(it->second));
            else
                grads.emplace(name, ad::Tensor::zeros(tensor.shape));
        }
        rows.push_back(ad::GradientVector::from_named(grads).values);
    }

    ad::Tensor k({m, m});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = i; j < m; ++j) {
            double s = 0.0;
            const auto& ri = rows[static_cast<size_t>(i)];
            const auto& rj = rows[static_cast<size_t>(j)];
            for (size_t t = 0; t < ri.size(); ++t) s += ri[t] * rj[t];
            k.at(i, j) = s / n;
            k.at(j, i) = k.at(i, j);
        }
    return k;
}

std::pair<double, double> spectrum(const ad::Tensor& kernel) {
    require(kernel.rank() == 2 && kernel.shape[0] == kernel.shape[1], "spectrum: square matrix required");
    const std::int64_t m = kernel.shape[0];
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = i + 1; j < m; ++j)
            require(std::abs(kernel.at(i, j) - kernel.at(j, i)) <= 1e-9 * std::max(1.0, std::abs(kernel.at(i, j))),
                    "spectrum: matrix is not symmetric");

    constexpr double kTol = 1e-10;
    constexpr int kMaxIter = 100000;

    auto power_iterate = [&](auto&& matvec) -> double {
        Rng rng(0x5eed5eedULL);
        std::vector<double> v(static_cast<size_t>(m));
        double norm = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;

        double lambda = 0.0;
        std::vector<double> w(static_cast<size_t>(m));
        for (int it = 0; it < kMaxIter; ++it) {
            matvec(v, w);
            double wn = 0.0, rayleigh = 0.0;
            for (std::int64_t i = 0; i < m; ++i) {
                wn += w[static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
                rayleigh += v[static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
            }
            wn = std::sqrt(wn);
            if (wn <= 1e-300) return 0.0;  // (near-)zero operator
            for (auto& x : w) x /= wn;
            v.swap(w);
            if (std::abs(rayleigh - lambda) <= kTol * std::max(std::abs(rayleigh), 1e-30)) return rayleigh;
            lambda = rayleigh;
        }
        throw std::runtime_error("spectrum: power iteration did not converge in 1e5 iterations");
    };

    // Dominant eigenvalue by magnitude (signed Rayleigh quotient).
    const double dominant = power_iterate([&](const std::vector<double>& v, std::vector<double>& w) {
        for (std::int64_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < m; ++j) s += kernel.at(i, j) * v[static_cast<size_t>(j)];
            w[static_cast<size_t>(i)] = s;
        }
    });
    double lambda_max = dominant;
    if (dominant < 0.0) {
        // The dominant eigenvalue is the most negative one; recover the top of
        // the spectrum from the PSD operator K + |dominant| I.
        const double shift = -dominant;
        lambda_max = power_iterate([&](const std::vector<double>& v, std::vector<double>& w) {
                         for (std::int64_t i = 0; i < m; ++i) {
                             double s = shift * v[static_cast<size_t>(i)];
                             for (std::int64_t j = 0; j < m; ++j)
                                 s += kernel.at(i, j) * v[static_cast<size_t>(j)];
                             w[static_cast<size_t>(i)] = s;
                         }
                     }) -
                     shift;
    }
    // Shifted operator lambda_max*I - K has top eigenvalue lambda_max - lambda_min.
    const double shift_max = power_iterate([&](const std::vector<double>& v, std::vector<double>& w) {
        for (std::int64_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < m; ++j) s += kernel.at(i, j) * v[static_cast<size_t>(j)];
            w[static_cast<size_t>(i)] = lambda_max * v[static_cast<size_t>(i)] - s;
        }
    });
    return {lambda_max - shift_max, lambda_max};
}

double ntk_learning_rate(double lambda_min, double lambda_max, std::int64_t n) {
    if (lambda_min <= 0.0 || lambda_max <= 0.0)
        throw std::invalid_argument("ntk_learning_rate: eigenvalues must be positive");
    require(n >= 1, "ntk_learning_rate: width must be >= 1");
    return 2.0 / ((lambda_min + lambda_max) * static_cast<double>(n));
}

RippleDelta ripple_delta(const models::Model& start, const ad::Tensor& ke_inputs,
                         const std::vector<double>& ke_targets, std::int64_t steps, double eta) {
    require(start.is_mlp(), "ripple_delta: MLP model required");
    const ad::Tensor before = models::mlp_forward(start, ke_inputs);

    models::TrainConfig cfg;
    cfg.steps = steps;
    cfg.lr = eta;
    models::TrainResult tr = models::train(start, ke_inputs, ke_targets, cfg);

    const ad::Tensor after = models::mlp_forward(tr.model, ke_inputs);
    RippleDelta out;
    out.loss_curve = std::move(tr.loss_curve);
    const std::int64_t m = ke_inputs.shape[0];
    out.delta.resize(static_cast<size_t>(m));
    for (std::int64_t i = 0; i < m; ++i)
        out.delta[static_cast<size_t>(i)] = after.at(i, 1) - before.at(i, 1);  // head f'
    return out;
}

void NtkRunConfig::validate() const {
    require(widths.size() >= 2, "NtkRunConfig: at least two widths required");
    for (size_t i = 1; i < widths.size(); ++i)
        require(widths[i] > widths[i - 1], "NtkRunConfig: widths must be strictly increasing");
    require(widths.front() >= 1, "NtkRunConfig: widths must be positive");
    require(seeds_per_width >= 1, "NtkRunConfig: seeds_per_width must be >= 1");
    require(depth >= 1, "NtkRunConfig: depth must be >= 1");
    require(input_dim >= 1 && pretrain_size >= 1 && edit_size >= 1, "NtkRunConfig: sizes must be positive");
    require(pretrain_max_steps >= 1 && ke_steps >= 0, "NtkRunConfig: step counts invalid");
}

NtkData make_ntk_data(const NtkRunConfig& config) {
    Rng rng(config.data_seed);
    auto sphere_rows = [&](std::int64_t count) {
        ad::Tensor t({count, config.input_dim});
        for (std::int64_t i = 0; i < count; ++i) {
            double norm = 0.0;
            do {
                norm = 0.0;
                for (std::int64_t j = 0; j < config.input_dim; ++j) {
                    const double x = rng.normal();
                    t.at(i, j) = x;
                    norm += x * x;
                }
            } while (norm <= 1e-12);
            norm = std::sqrt(norm);
            for (std::int64_t j = 0; j < config.input_dim; ++j) t.at(i, j) /= norm;
        }
        return t;
    };
    auto targets = [&](std::int64_t count) {
        std::vector<double> z(static_cast<size_t>(count));
        for (auto& x : z) x = rng.uniform(-1.0, 1.0);
        return z;
    };
    NtkData data;
    data.pretrain_inputs = sphere_rows(config.pretrain_size);
    data.pretrain_targets = targets(config.pretrain_size);
    data.edit_inputs = sphere_rows(config.edit_size);
    data.edit_targets = targets(config.edit_size);

    // Assumption-2 hygiene: the combined input set must be duplicate-free.
    auto row = [&](const ad::Tensor& t, std::int64_t i) {
        return std::vector<double>(t.data.begin() + i * t.shape[1], t.data.begin() + (i + 1) * t.shape[1]);
    };
    std::vector<std::vector<double>> all;
    for (std::int64_t i = 0; i < data.pretrain_inputs.shape[0]; ++i) all.push_back(row(data.pretrain_inputs, i));
    for (std::int64_t i = 0; i < data.edit_inputs.shape[0]; ++i) all.push_back(row(data.edit_inputs, i));
    std::sort(all.begin(), all.end());
    require(std::adjacent_find(all.begin(), all.end()) == all.end(),
            "make_ntk_data: duplicate inputs drawn; change data_seed");
    return data;
}

namespace {

ScanCell run_cell(const NtkRunConfig& config, const NtkData& data, std::int64_t width, int seed) {
    ScanCell cell;
    cell.width = width;
    cell.seed = seed;

    models::MlpConfig mcfg;
    mcfg.input_dim = config.input_dim;
    mcfg.width = width;
    mcfg.depth = config.depth;
    mcfg.activation = config.activation;
    const std::uint64_t cell_seed =
        Rng::mix(config.init_seed, static_cast<std::uint64_t>(width) * 1000003ULL + static_cast<std::uint64_t>(seed));
    const models::Model theta0 = models::init_model(mcfg, cell_seed);

    // Pretraining rate from the D_PT kernel at theta_0.
    const ad::Tensor k_pt = empirical_ntk(theta0, data.pretrain_inputs, 0);
    std::tie(cell.pt_lambda_min, cell.pt_lambda_max) = spectrum(k_pt);
    cell.pt_eta = ntk_learning_rate(cell.pt_lambda_min, cell.pt_lambda_max, width);

    models::TrainConfig pt_cfg;
    pt_cfg.steps = config.pretrain_max_steps;
    pt_cfg.lr = cell.pt_eta;
    pt_cfg.stop_loss = config.pretrain_stop_loss;
    models::TrainResult pre = models::train(theta0, data.pretrain_inputs, data.pretrain_targets, pt_cfg);
    cell.pretrain_steps = pre.steps_run;
    cell.pretrain_stop = pre.stop_reason;
    cell.pretrain_final_loss = pre.loss_curve.empty() ? 0.0 : pre.loss_curve.back();

    // KE rate from the D_KE kernel at theta_0; reused unchanged for both runs.
    const ad::Tensor k_ke = empirical_ntk(theta0, data.edit_inputs, 0);
    std::tie(cell.lambda_min, cell.lambda_max) = spectrum(k_ke);
    cell.lambda_flagged = !(cell.lambda_min > 0.0);
    cell.eta = ntk_learning_rate(std::max(cell.lambda_min, 1e-300), cell.lambda_max, width);

    RippleDelta from_init = ripple_delta(theta0, data.edit_inputs, data.edit_targets, config.ke_steps, cell.eta);
    RippleDelta from_star = ripple_delta(pre.model, data.edit_inputs, data.edit_targets, config.ke_steps, cell.eta);

    double acc = 0.0, star = 0.0;
    for (size_t i = 0; i < from_init.delta.size(); ++i) {
        const double d = from_init.delta[i] - from_star.delta[i];
        acc += d * d;
        star += from_star.delta[i] * from_star.delta[i];
    }
    cell.diff_norm = std::sqrt(acc);
    cell.delta_star = from_star.delta;
    cell.delta_star_norm = std::sqrt(star);

    std::vector<double> head(from_star.loss_curve.begin(),
                             from_star.loss_curve.begin() +
                                 std::min<std::int64_t>(config.decay_fit_steps,
                                                        static_cast<std::int64_t>(from_star.loss_curve.size())));
    const ExpFit fit = fit_exp_decay(head);
    cell.decay_c = fit.c;
    cell.decay_r2 = fit.r2;
    return cell;
}

}  // namespace

ScanResult width_scan(const NtkRunConfig& config, int threads) {
    config.validate();
    ScanResult result;
    result.config = config;
    const NtkData data = make_ntk_data(config);

    struct CellKey {
        std::int64_t width;
        int seed;
    };
    std::vector<CellKey> keys;
    for (std::int64_t w : config.widths)
        for (int s = 0; s < config.seeds_per_width; ++s) keys.push_back({w, s});
    result.cells.resize(keys.size());

    const int workers = std::max(1, threads);
    std::atomic<size_t> next{0};
    std::vector<std::string> errors(keys.size());
    auto work = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= keys.size()) return;
            try {
                result.cells[i] = run_cell(config, data, keys[i].width, keys[i].seed);
            } catch (const std::exception& e) {
                errors[i] = "width " + std::to_string(keys[i].width) + " seed " +
                            std::to_string(keys[i].seed) + ": " + e.what();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (const auto& err : errors)
        if (!err.empty()) throw std::runtime_error("width_scan cell failed: " + err);

    // Corollary: norm of the seed-mean of delta_star per width.
    for (std::int64_t w : config.widths) {
        std::vector<double> mean(static_cast<size_t>(config.edit_size), 0.0);
        int count = 0;
        for (const auto& cell : result.cells)
            if (cell.width == w) {
                for (size_t i = 0; i < mean.size(); ++i) mean[i] += cell.delta_star[i];
                ++count;
            }
        double norm = 0.0;
        for (double& x : mean) {
            x /= static_cast<double>(count);
            norm += x * x;
        }
        result.corollary_norm[w] = std::sqrt(norm);
    }

    std::vector<std::pair<double, double>> pts;
    for (const auto& cell : result.cells)
        pts.emplace_back(static_cast<double>(cell.width), cell.diff_norm);
    result.fit = fit_loglog_slope(pts);
    return result;
}

FitResult fit_loglog_slope(const std::vector<std::pair<double, double>>& size_norm_pairs) {
    require(size_norm_pairs.size() >= 2, "fit_loglog_slope: at least two points required");
    std::vector<double> ns;
    for (const auto& [n, norm] : size_norm_pairs) {
        require(n > 0.0, "fit_loglog_slope: sizes must be positive");
        if (!(norm > 0.0))
            throw std::invalid_argument("fit_loglog_slope: zero norm, log undefined");
        ns.push_back(n);
    }
    std::sort(ns.begin(), ns.end());
    require(ns.front() != ns.back(), "fit_loglog_slope: at least two distinct sizes required");

    const double m = static_cast<double>(size_norm_pairs.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (const auto& [n, norm] : size_norm_pairs) {
        const double x = std::log(n), y = std::log(norm);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    FitResult fit;
    const double denom = m * sxx - sx * sx;
    fit.slope = (m * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / m;
    for (const auto& [n, norm] : size_norm_pairs) {
        const double r = std::log(norm) - (fit.intercept + fit.slope * std::log(n));
        fit.residual += r * r;
    }
    return fit;
}

ExpFit fit_exp_decay(const std::vector<double>& losses) {
    require(losses.size() >= 10, "fit_exp_decay: at least 10 steps required");
    std::vector<std::pair<double, double>> pts;  // (t, ln loss)
    ExpFit out;
    for (size_t t = 0; t < losses.size(); ++t) {
        if (losses[t] > 0.0)
            pts.emplace_back(static_cast<double>(t), std::log(losses[t]));
        else
            ++out.excluded;
    }
    require(pts.size() >= 2, "fit_exp_decay: fewer than 2 positive losses");

    const double m = static_cast<double>(pts.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (auto [x, y] : pts) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double denom = m * sxx - sx * sx;
    const double slope = denom != 0.0 ? (m * sxy - sx * sy) / denom : 0.0;
    const double intercept = (sy - slope * sx) / m;
    out.c = -slope;

    double ss_res = 0.0, ss_tot = 0.0;
    const double ybar = sy / m;
    for (auto [x, y] : pts) {
        const double e = y - (intercept + slope * x);
        ss_res += e * e;
        ss_tot += (y - ybar) * (y - ybar);
    }
    out.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return out;
}

void write_scan_csv(std::ostream& out, const ScanResult& result) {
    out << "width,seed,norm,lambda_min,lambda_max,eta,decay_c,decay_r2\n";
    for (const auto& c : result.cells) {
        out << c.width << "," << c.seed << "," << util::fmt17(c.diff_norm) << ","
            << util::fmt17(c.lambda_min) << "," << util::fmt17(c.lambda_max) << ","
            << util::fmt17(c.eta) << "," << util::fmt17(c.decay_c) << ","
            << util::fmt17(c.decay_r2) << "\n";
    }
}

std::string scan_summary_json(const ScanResult& result, double slope_lo, double slope_hi) {
    ordered_json j;
    j["slope"] = result.fit.slope;
    j["intercept"] = result.fit.intercept;
    j["residual"] = result.fit.residual;
    j["slope_band"] = {slope_lo, slope_hi};
    j["verdict"] = (result.fit.slope >= slope_lo && result.fit.slope <= slope_hi) ? "pass" : "fail";
    j["ke_steps"] = result.config.ke_steps;
    ordered_json widths = ordered_json::array();
    for (std::int64_t w : result.config.widths) {
        ordered_json entry;
        entry["width"] = w;
        entry["corollary_norm"] = result.corollary_norm.at(w);
        double mean_diff = 0.0, mean_r2 = 0.0, mean_pt_lmin = 0.0, mean_pt_lmax = 0.0;
        int count = 0;
        bool flagged = false;
        for (const auto& c : result.cells)
            if (c.width == w) {
                mean_diff += c.diff_norm;
                mean_r2 += c.decay_r2;
                mean_pt_lmin += c.pt_lambda_min;
                mean_pt_lmax += c.pt_lambda_max;
                flagged = flagged || c.lambda_flagged;
                ++count;
            }
        entry["mean_diff_norm"] = mean_diff / count;
        entry["mean_decay_r2"] = mean_r2 / count;
        entry["mean_pt_lambda_min"] = mean_pt_lmin / count;
        entry["mean_pt_lambda_max"] = mean_pt_lmax / count;
        entry["lambda_flagged"] = flagged;
        widths.push_back(std::move(entry));
    }
    j["widths"] = std::move(widths);
    return j.dump(2) + "\n";
}

}  // namespace ripple::ntk
