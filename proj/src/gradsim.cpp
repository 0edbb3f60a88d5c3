#include "ripple/gradsim.hpp"

#include <cmath>
#include <set>

#include "ripple/util.hpp"

namespace ripple::gradsim {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

ad::GradientVector collect_filtered(const models::Model& model, ad::Tape& tape,
                                    const models::LeafMap& leaves, const ParamFilter& filter) {
    ad::NamedParams grads;
    for (const auto& [name, tensor] : model.params) {
        if (!filter(name)) continue;
        auto it = leaves.find(name);
        if (it != leaves.end() && tape.has_grad(it->second)) {
            grads.emplace(name, tape.grad(it->second));
        } else {
            grads.emplace(name, ad::Tensor::zeros(tensor.shape));
        }
    }
    require(!grads.empty(), "parameter filter selects no parameters");
    return ad::GradientVector::from_named(grads);
}

}  // namespace

ParamFilter all_params() {
    return [](const std::string&) { return true; };
}

ParamFilter name_prefix(std::string prefix) {
    return [prefix = std::move(prefix)](const std::string& name) {
        return name.rfind(prefix, 0) == 0;
    };
}

ParamFilter down_proj_params(const models::Model& model) {
    std::set<std::string> names(model.down_proj.begin(), model.down_proj.end());
    return [names = std::move(names)](const std::string& name) { return names.count(name) > 0; };
}

LayerMap model_layer_map(const models::Model& model) {
    return LayerMap{model.layer_names, model.layer_params};
}

LayerMap down_proj_layer_map(const models::Model& model) {
    LayerMap map;
    for (size_t i = 0; i < model.down_proj.size(); ++i) {
        map.names.push_back("blocks." + std::to_string(i));
        map.params.push_back({model.down_proj[i]});
    }
    return map;
}

ad::GradientVector knowledge_gradient(const models::Model& model, const TokenSeq& query,
                                      const TokenSeq& answer, const ParamFilter& filter) {
    require(!answer.empty(), "knowledge_gradient: zero-length answer");
    ad::Tape tape;
    models::LeafMap leaves;
    ad::Value lp = models::build_lm_logprob_graph(tape, model, query, answer, leaves, /*with_grad=*/true);
    tape.backward(lp);
    return collect_filtered(model, tape, leaves, filter);
}

ad::GradientVector probability_gradient(const models::Model& model, const TokenSeq& query,
                                        const TokenSeq& answer, const ParamFilter& filter) {
    require(!answer.empty(), "probability_gradient: zero-length answer");
    ad::Tape tape;
    models::LeafMap leaves;
    ad::Value lp = models::build_lm_logprob_graph(tape, model, query, answer, leaves, /*with_grad=*/true);
    ad::Value p = tape.exp(lp);
    tape.backward(p);
    return collect_filtered(model, tape, leaves, filter);
}

double grad_sim(const ad::GradientVector& g1, const ad::GradientVector& g2) {
    require(g1.same_layout(g2), "grad_sim: gradient layouts differ");
    const double n1 = g1.norm();
    const double n2 = g2.norm();
    if (n1 <= 1e-15 || n2 <= 1e-15)
        throw std::domain_error("grad_sim: zero-norm gradient (norms " + util::fmt17(n1) + ", " +
                                util::fmt17(n2) + ")");
    return g1.dot(g2) / (n1 * n2);
}

namespace {

// Maps each layer to its (offset, length) slices and checks exact coverage.
std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> layer_slices(
    const ad::GradientVector& g, const LayerMap& map) {
    require(map.names.size() == map.params.size(), "layer map: names/params size mismatch");
    std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> slices(map.size());
    std::set<std::string> covered;
    for (size_t layer = 0; layer < map.size(); ++layer) {
        for (const auto& pname : map.params[layer]) {
            const auto* seg = g.find(pname);
            if (!seg) continue;  // layer param absent from a filtered layout
            slices[layer].emplace_back(seg->offset, seg->length);
            covered.insert(pname);
        }
    }
    for (const auto& seg : g.layout)
        require(covered.count(seg.name) > 0,
                "layer map does not cover layout entry '" + seg.name + "'");
    return slices;
}

}  // namespace

std::vector<double> layer_l1_profile(const ad::GradientVector& g, const LayerMap& map) {
    auto slices = layer_slices(g, map);
    std::vector<double> profile(map.size(), 0.0);
    for (size_t layer = 0; layer < map.size(); ++layer)
        for (auto [off, len] : slices[layer])
            for (std::int64_t i = 0; i < len; ++i)
                profile[layer] += std::abs(g.values[static_cast<size_t>(off + i)]);
    return profile;
}

std::vector<std::optional<double>> per_layer_gradsim(const ad::GradientVector& g1,
                                                     const ad::GradientVector& g2,
                                                     const LayerMap& map) {
    require(g1.same_layout(g2), "per_layer_gradsim: gradient layouts differ");
    auto slices = layer_slices(g1, map);
    std::vector<std::optional<double>> out(map.size());
    for (size_t layer = 0; layer < map.size(); ++layer) {
        double dot = 0.0, s1 = 0.0, s2 = 0.0;
        for (auto [off, len] : slices[layer]) {
            for (std::int64_t i = 0; i < len; ++i) {
                const double a = g1.values[static_cast<size_t>(off + i)];
                const double b = g2.values[static_cast<size_t>(off + i)];
                dot += a * b;
                s1 += a * a;
                s2 += b * b;
            }
        }
        if (s1 <= 0.0 || s2 <= 0.0) {
            out[layer] = std::nullopt;  // flagged missing: zero-norm slice
        } else {
            out[layer] = dot / (std::sqrt(s1) * std::sqrt(s2));
        }
    }
    return out;
}

void write_gradsim_csv(std::ostream& out, const std::vector<GradSimRecord>& records,
                       const LayerMap& map) {
    out << "x_id,y_id,category,gradsim,norm_x,norm_y";
    for (const auto& name : map.names) out << ",cos_" << name;
    out << "\n";
    for (const auto& r : records) {
        out << r.x_id << "," << r.y_id << "," << r.category << "," << util::fmt17(r.gradsim) << ","
            << util::fmt17(r.norm_x) << "," << util::fmt17(r.norm_y);
        for (const auto& c : r.per_layer) {
            out << ",";
            if (c.has_value()) out << util::fmt17(*c);
        }
        out << "\n";
    }
}

}  // namespace ripple::gradsim
