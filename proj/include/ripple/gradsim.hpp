#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ripple/grad_vector.hpp"
#include "ripple/model.hpp"

namespace ripple::gradsim {

using TokenSeq = models::TokenSeq;
using ParamFilter = std::function<bool(const std::string&)>;

ParamFilter all_params();
ParamFilter name_prefix(std::string prefix);
// Preset "down-proj": the model's designated down-projection parameters.
ParamFilter down_proj_params(const models::Model& model);

// Ordered partition of a gradient layout into named layers.
struct LayerMap {
    std::vector<std::string> names;
    std::vector<std::vector<std::string>> params;
    size_t size() const { return names.size(); }
};

LayerMap model_layer_map(const models::Model& model);      // full partition
LayerMap down_proj_layer_map(const models::Model& model);  // one entry per block

// Gradient of log P(answer | query) w.r.t. the filtered parameters, in
// canonical (name-sorted) layout. Gradients are taken at the model's current
// (pre-edit) parameters.
ad::GradientVector knowledge_gradient(const models::Model& model, const TokenSeq& query,
                                      const TokenSeq& answer,
                                      const ParamFilter& filter = all_params());

// Gradient of the raw probability P(answer | query); cosine-equivalent to the
// log-probability gradient since grad P = P * grad log P with P > 0.
ad::GradientVector probability_gradient(const models::Model& model, const TokenSeq& query,
                                        const TokenSeq& answer,
                                        const ParamFilter& filter = all_params());

// cos(g1, g2); layouts must match and both norms must exceed 1e-15.
double grad_sim(const ad::GradientVector& g1, const ad::GradientVector& g2);

// Per-layer sum of absolute gradient entries, in layer-map order. The map
// must cover the layout exactly.
std::vector<double> layer_l1_profile(const ad::GradientVector& g, const LayerMap& map);

// Per-layer cosine; a layer whose slice has zero norm on either side yields
// a flagged missing value.
std::vector<std::optional<double>> per_layer_gradsim(const ad::GradientVector& g1,
                                                     const ad::GradientVector& g2,
                                                     const LayerMap& map);

struct GradSimRecord {
    std::string x_id;
    std::string y_id;
    std::string category;
    double gradsim = 0.0;
    double norm_x = 0.0;
    double norm_y = 0.0;
    std::string filter_desc;
    std::vector<std::optional<double>> per_layer;
};

// CSV: x_id, y_id, category, gradsim, norm_x, norm_y, then per-layer cosines
// (blank cell for a flagged missing value).
void write_gradsim_csv(std::ostream& out, const std::vector<GradSimRecord>& records,
                       const LayerMap& map);

}  // namespace ripple::gradsim
