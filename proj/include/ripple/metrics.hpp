#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ripple/model.hpp"
#include "ripple/worldgen.hpp"

namespace ripple::metrics {

using TokenSeq = models::TokenSeq;

bool contains_subsequence(const TokenSeq& haystack, const TokenSeq& needle);

// Fraction of sampled generations containing the gold answer as a contiguous
// token subsequence; for should-avoid pairs the fraction NOT containing it.
double em_rate(const models::Model& model, const TokenSeq& query, const TokenSeq& gold,
               int n_samples = 50, double temperature = 0.7, std::int64_t max_len = 15,
               std::uint64_t seed = 0, bool should_avoid = false);

// log P_post(answer | query) - log P_pre(answer | query).
double abs_gain(const models::Model& model_pre, const models::Model& model_post,
                const TokenSeq& query, const TokenSeq& answer);

struct RelGain {
    double value = 0.0;
    bool defined = false;
};

// gain_y / gain_x, undefined when |gain_x| < epsilon.
RelGain rel_gain(double gain_y, double gain_x, double epsilon = 1e-6);

double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

struct MetricRow {
    std::string edit_id;
    std::string pair_id;
    worldgen::Category category = worldgen::Category::LG;
    double gradsim = 0.0;
    double em = 0.0;
    double gain = 0.0;  // Delta log P(y)
    RelGain rel;
    double gradsim_vs_edit_target = 0.0;
    double gradsim_vs_gold = 0.0;
    double pre_logprob = 0.0;
    double post_logprob = 0.0;
    double edit_em = 0.0;  // EM of the edited fact itself; cluster split key
};

struct ClusterStat {
    std::int64_t count = 0;
    double mean_gradsim = 0.0;
    double mean_metric = 0.0;
};

struct MetricReport {
    std::string metric;
    bool r_defined = false;
    double r = 0.0;
    std::int64_t n = 0;
    bool control_r_defined = false;
    double control_r = 0.0;  // PV/RS negative control
    std::int64_t control_n = 0;
    std::optional<ClusterStat> successful;
    std::optional<ClusterStat> unsuccessful;
};

struct CorrelationReport {
    double cluster_threshold = 0.5;
    std::int64_t undefined_rel_gain_rows = 0;
    std::vector<MetricReport> metrics;  // em_rate, abs_gain, rel_gain
};

// Correlates GradSim with each metric over the ripple tasks
// (LG/CI/CII/SA/NEG/XLING) and separately over the PV/RS control rows;
// clusters rows by edit success (edit_em >= 0.5). Needs >= 3 ripple rows.
CorrelationReport build_report(const std::vector<MetricRow>& rows);

struct OverRippleStat {
    double logp_edit_target = 0.0;  // log P(a'_x | q_y)
    double logp_gold = 0.0;         // log P(a'_y | q_y)
    double gap = 0.0;               // edit target minus gold
    double gradsim_vs_edit_target = 0.0;
    double gradsim_vs_gold = 0.0;
    bool flagged = false;  // greedy argmax answer equals the edited target
};

OverRippleStat over_ripple_stat(const models::Model& model_post, const TokenSeq& query_y,
                                const TokenSeq& edit_target, const TokenSeq& gold,
                                double gradsim_vs_edit_target, double gradsim_vs_gold);

void write_metric_csv(std::ostream& out, const std::vector<MetricRow>& rows);
std::string report_to_json(const CorrelationReport& report);

}  // namespace ripple::metrics
