#include "ripple/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ripple/rng.hpp"
#include "ripple/util.hpp"

namespace ripple::metrics {

using nlohmann::ordered_json;

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

bool is_control(worldgen::Category c) {
    return c == worldgen::Category::PV || c == worldgen::Category::RS;
}

}  // namespace

bool contains_subsequence(const TokenSeq& haystack, const TokenSeq& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return false;
    for (size_t i = 0; i + needle.size() <= haystack.size(); ++i)
        if (std::equal(needle.begin(), needle.end(), haystack.begin() + static_cast<std::ptrdiff_t>(i)))
            return true;
    return false;
}

double em_rate(const models::Model& model, const TokenSeq& query, const TokenSeq& gold,
               int n_samples, double temperature, std::int64_t max_len, std::uint64_t seed,
               bool should_avoid) {
    require(n_samples >= 1, "em_rate: n_samples must be >= 1");
    int hits = 0;
    for (int i = 0; i < n_samples; ++i) {
        const TokenSeq sample = models::sample_generate(
            model, query, temperature, max_len, Rng::mix(seed, static_cast<std::uint64_t>(i)));
        const bool contains = contains_subsequence(sample, gold);
        if (should_avoid ? !contains : contains) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n_samples);
}

double abs_gain(const models::Model& model_pre, const models::Model& model_post,
                const TokenSeq& query, const TokenSeq& answer) {
    return models::lm_logprob(model_post, query, answer) - models::lm_logprob(model_pre, query, answer);
}

RelGain rel_gain(double gain_y, double gain_x, double epsilon) {
    if (std::abs(gain_x) < epsilon) return {0.0, false};
    return {gain_y / gain_x, true};
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    require(xs.size() == ys.size(), "pearson: length mismatch");
    require(xs.size() >= 3, "pearson: need at least 3 samples");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) throw std::invalid_argument("pearson: degenerate variance");
    return sxy / std::sqrt(sxx * syy);
}

namespace {

MetricReport correlate_metric(const std::vector<MetricRow>& rows, const std::string& name,
                              const std::function<std::optional<double>(const MetricRow&)>& get,
                              double cluster_threshold) {
    MetricReport rep;
    rep.metric = name;

    std::vector<double> xs, ys, cxs, cys;
    for (const auto& row : rows) {
        const auto v = get(row);
        if (!v.has_value()) continue;
        if (is_control(row.category)) {
            cxs.push_back(row.gradsim);
            cys.push_back(*v);
        } else {
            xs.push_back(row.gradsim);
            ys.push_back(*v);
        }
    }
    rep.n = static_cast<std::int64_t>(xs.size());
    rep.control_n = static_cast<std::int64_t>(cxs.size());
    auto try_pearson = [](const std::vector<double>& a, const std::vector<double>& b,
                          bool& defined) -> double {
        if (a.size() < 3) {
            defined = false;
            return 0.0;
        }
        try {
            double r = pearson(a, b);
            defined = true;
            return r;
        } catch (const std::invalid_argument&) {
            defined = false;  // degenerate variance
            return 0.0;
        }
    };
    rep.r = try_pearson(xs, ys, rep.r_defined);
    rep.control_r = try_pearson(cxs, cys, rep.control_r_defined);

    ClusterStat succ, fail;
    for (const auto& row : rows) {
        if (is_control(row.category)) continue;
        const auto v = get(row);
        if (!v.has_value()) continue;
        ClusterStat& c = row.edit_em >= cluster_threshold ? succ : fail;
        c.count += 1;
        c.mean_gradsim += row.gradsim;
        c.mean_metric += *v;
    }
    auto finish = [](ClusterStat& c) -> std::optional<ClusterStat> {
        if (c.count == 0) return std::nullopt;  // empty cluster: no mean emitted
        c.mean_gradsim /= static_cast<double>(c.count);
        c.mean_metric /= static_cast<double>(c.count);
        return c;
    };
    rep.successful = finish(succ);
    rep.unsuccessful = finish(fail);
    return rep;
}

}  // namespace

CorrelationReport build_report(const std::vector<MetricRow>& rows) {
    std::int64_t ripple_rows = 0;
    for (const auto& row : rows)
        if (!is_control(row.category)) ++ripple_rows;
    require(ripple_rows >= 3, "build_report: insufficient rows (need >= 3 ripple rows)");

    CorrelationReport report;
    for (const auto& row : rows)
        if (!row.rel.defined) ++report.undefined_rel_gain_rows;

    report.metrics.push_back(correlate_metric(
        rows, "em_rate", [](const MetricRow& r) { return std::optional<double>(r.em); },
        report.cluster_threshold));
    report.metrics.push_back(correlate_metric(
        rows, "abs_gain", [](const MetricRow& r) { return std::optional<double>(r.gain); },
        report.cluster_threshold));
    report.metrics.push_back(correlate_metric(
        rows, "rel_gain",
        [](const MetricRow& r) {
            return r.rel.defined ? std::optional<double>(r.rel.value) : std::nullopt;
        },
        report.cluster_threshold));
    return report;
}

OverRippleStat over_ripple_stat(const models::Model& model_post, const TokenSeq& query_y,
                                const TokenSeq& edit_target, const TokenSeq& gold,
                                double gradsim_vs_edit_target, double gradsim_vs_gold) {
    require(edit_target != gold, "over_ripple_stat: edit target equals the gold answer");
    OverRippleStat stat;
    stat.logp_edit_target = models::lm_logprob(model_post, query_y, edit_target);
    stat.logp_gold = models::lm_logprob(model_post, query_y, gold);
    stat.gap = stat.logp_edit_target - stat.logp_gold;
    stat.gradsim_vs_edit_target = gradsim_vs_edit_target;
    stat.gradsim_vs_gold = gradsim_vs_gold;
    TokenSeq argmax = models::sample_generate(model_post, query_y, 1.0, 15, 0, /*greedy=*/true);
    if (argmax.size() > edit_target.size()) argmax.resize(edit_target.size());
    stat.flagged = argmax == edit_target;
    return stat;
}

void write_metric_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
    out << "edit_id,pair_id,category,gradsim,em_rate,abs_gain,rel_gain,rel_gain_defined,"
           "gradsim_vs_edit_target,gradsim_vs_gold,pre_logprob,post_logprob,edit_em\n";
    for (const auto& r : rows) {
        out << r.edit_id << "," << r.pair_id << "," << worldgen::to_string(r.category) << ","
            << util::fmt17(r.gradsim) << "," << util::fmt17(r.em) << "," << util::fmt17(r.gain) << ",";
        if (r.rel.defined) out << util::fmt17(r.rel.value);
        out << "," << (r.rel.defined ? 1 : 0) << "," << util::fmt17(r.gradsim_vs_edit_target) << ","
            << util::fmt17(r.gradsim_vs_gold) << "," << util::fmt17(r.pre_logprob) << ","
            << util::fmt17(r.post_logprob) << "," << util::fmt17(r.edit_em) << "\n";
    }
}

std::string report_to_json(const CorrelationReport& report) {
    ordered_json j;
    j["cluster_threshold"] = report.cluster_threshold;
    j["undefined_rel_gain_rows"] = report.undefined_rel_gain_rows;
    ordered_json metrics = ordered_json::array();
    for (const auto& m : report.metrics) {
        ordered_json e;
        e["metric"] = m.metric;
        e["pearson_r"] = m.r_defined ? ordered_json(m.r) : ordered_json(nullptr);
        e["sample_count"] = m.n;
        e["negative_control_r"] = m.control_r_defined ? ordered_json(m.control_r) : ordered_json(nullptr);
        e["negative_control_count"] = m.control_n;
        auto cluster = [](const std::optional<ClusterStat>& c) -> ordered_json {
            if (!c.has_value()) return nullptr;
            ordered_json out;
            out["count"] = c->count;
            out["mean_gradsim"] = c->mean_gradsim;
            out["mean_metric"] = c->mean_metric;
            return out;
        };
        e["cluster_successful"] = cluster(m.successful);
        e["cluster_unsuccessful"] = cluster(m.unsuccessful);
        metrics.push_back(std::move(e));
    }
    j["metrics"] = std::move(metrics);
    return j.dump(2) + "\n";
}

}  // namespace ripple::metrics
