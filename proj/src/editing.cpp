#include "ripple/editing.hpp"

#include <algorithm>
#include <cmath>

#include "ripple/ntk.hpp"

namespace ripple::editing {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

constexpr int kValueAscentSteps = 50;
constexpr double kValueAscentStep = 0.1;

double edit_set_logprob(const models::Model& model, const std::vector<models::LmExample>& edit_set) {
    double total = 0.0;
    for (const auto& ex : edit_set) total += models::lm_logprob(model, ex.query, ex.answer);
    return total;
}

}  // namespace

void EditConfig::validate() const {
    if (method == Method::Finetune) {
        require(steps >= 1, "EditConfig: finetune needs steps >= 1");
        require(auto_ntk_lr || lr >= 0.0, "EditConfig: learning rate must be non-negative");
    }
}

EditOutcome finetune_edit(const models::Model& model, const std::vector<models::LmExample>& edit_set,
                          const EditConfig& config) {
    config.validate();
    require(!model.is_mlp(), "finetune_edit(lm): model is not a language model");
    require(!edit_set.empty(), "finetune_edit: empty edit set");
    require(!config.auto_ntk_lr, "finetune_edit: auto-ntk learning rate requires an MLP model");
    const models::LmConfig& lm_cfg = model.lm();

    EditOutcome out;
    out.pre_logprob = edit_set_logprob(model, edit_set);
    out.model = model;

    std::int64_t total_targets = 0;
    for (const auto& ex : edit_set) total_targets += static_cast<std::int64_t>(ex.answer.size()) + 1;

    for (std::int64_t t = 0; t < config.steps; ++t) {
        ad::Tape tape;
        models::LeafMap leaves;
        ad::Value total{};
        for (const auto& ex : edit_set) {
            TokenSeq tokens = ex.query;
            tokens.insert(tokens.end(), ex.answer.begin(), ex.answer.end());
            models::LmGraphOut g = models::build_lm_graph(tape, out.model, tokens, leaves, /*with_grad=*/true);
            const std::int64_t qn = static_cast<std::int64_t>(ex.query.size());
            const std::int64_t an = static_cast<std::int64_t>(ex.answer.size());
            ad::Value rows = tape.slice_rows(g.logits, qn - 1, qn + an);
            TokenSeq targets = ex.answer;
            targets.push_back(lm_cfg.eos_token_id);
            ad::Value nll = tape.cross_entropy(rows, targets);
            total = total.valid() ? tape.add(total, nll) : nll;
        }
        ad::Value loss = tape.scalar_mul(total, 1.0 / static_cast<double>(total_targets));
        const double loss_val = tape.value(loss).data[0];
        if (loss_val > 1e6)
            throw std::runtime_error("finetune_edit diverged at step " + std::to_string(t));
        out.loss_curve.push_back(loss_val);
        tape.backward(loss);
        for (const auto& [name, leaf] : leaves) {
            if (!config.filter(name) || !tape.has_grad(leaf)) continue;
            const ad::Tensor& g = tape.grad(leaf);
            ad::Tensor& p = out.model.params.at(name);
            for (std::int64_t i = 0; i < p.numel(); ++i) p.data[i] -= config.lr * g.data[i];
        }
        out.steps_used = t + 1;
    }
    out.post_logprob = edit_set_logprob(out.model, edit_set);
    return out;
}

EditOutcome finetune_edit(const models::Model& model, const ad::Tensor& edit_inputs,
                          const std::vector<double>& edit_targets, const EditConfig& config) {
    config.validate();
    require(model.is_mlp(), "finetune_edit(mlp): model is not an MLP");
    require(edit_inputs.rank() == 2 && edit_inputs.shape[0] >= 1, "finetune_edit: empty edit set");

    double lr = config.lr;
    if (config.auto_ntk_lr) {
        const ad::Tensor kernel = ntk::empirical_ntk(model, edit_inputs, 0);
        auto [lmin, lmax] = ntk::spectrum(kernel);
        lr = ntk::ntk_learning_rate(lmin, lmax, model.mlp().width);
    }

    EditOutcome out;
    out.model = model;
    for (std::int64_t t = 0; t < config.steps; ++t) {
        ad::Tape tape;
        models::LeafMap leaves;
        ad::Value fout = models::build_mlp_graph(tape, out.model, edit_inputs, leaves, /*with_grad=*/true);
        ad::Tensor y({edit_inputs.shape[0], 1});
        for (std::int64_t i = 0; i < edit_inputs.shape[0]; ++i) y.data[i] = edit_targets.at(static_cast<size_t>(i));
        ad::Value loss = tape.scalar_mul(tape.squared_error(tape.slice_cols(fout, 0, 1), tape.constant(y)), 0.5);
        const double loss_val = tape.value(loss).data[0];
        if (loss_val > 1e6)
            throw std::runtime_error("finetune_edit diverged at step " + std::to_string(t));
        out.loss_curve.push_back(loss_val);
        tape.backward(loss);
        for (const auto& [name, leaf] : leaves) {
            if (!config.filter(name) || !tape.has_grad(leaf)) continue;
            const ad::Tensor& g = tape.grad(leaf);
            ad::Tensor& p = out.model.params.at(name);
            for (std::int64_t i = 0; i < p.numel(); ++i) p.data[i] -= lr * g.data[i];
        }
        out.steps_used = t + 1;
    }
    return out;
}

namespace {

std::vector<double> down_proj_l1_profile(const models::Model& model, const TokenSeq& query,
                                         const TokenSeq& answer) {
    require(!model.is_mlp(), "locate_layer: unsupported for MLP models");
    require(!model.down_proj.empty(), "locate_layer: model exposes no down-projection layers");
    ad::GradientVector g =
        gradsim::knowledge_gradient(model, query, answer, gradsim::down_proj_params(model));
    return gradsim::layer_l1_profile(g, gradsim::down_proj_layer_map(model));
}

}  // namespace

int locate_layer(const models::Model& model, const TokenSeq& query, const TokenSeq& answer) {
    const std::vector<double> profile = down_proj_l1_profile(model, query, answer);
    int best = 0;
    for (size_t i = 1; i < profile.size(); ++i)
        if (profile[i] > profile[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

void apply_rank_one_update(ad::Tensor& weight, const std::vector<double>& key,
                           const std::vector<double>& value) {
    require(weight.rank() == 2, "apply_rank_one_update: weight must be 2-D");
    const std::int64_t d_ff = weight.shape[0], d_model = weight.shape[1];
    require(static_cast<std::int64_t>(key.size()) == d_ff, "apply_rank_one_update: key length mismatch");
    require(static_cast<std::int64_t>(value.size()) == d_model, "apply_rank_one_update: value length mismatch");
    double ksq = 0.0;
    for (double k : key) ksq += k * k;
    if (ksq < 1e-12) throw std::domain_error("rank_one_edit: degenerate key (||k*|| < 1e-12)");

    // residual = value - W^T key
    std::vector<double> residual(value);
    for (std::int64_t i = 0; i < d_ff; ++i) {
        const double ki = key[static_cast<size_t>(i)];
        const double* wrow = weight.data.data() + i * d_model;
        for (std::int64_t j = 0; j < d_model; ++j) residual[static_cast<size_t>(j)] -= ki * wrow[j];
    }
    for (std::int64_t i = 0; i < d_ff; ++i) {
        const double scale = key[static_cast<size_t>(i)] / ksq;
        double* wrow = weight.data.data() + i * d_model;
        for (std::int64_t j = 0; j < d_model; ++j) wrow[j] += scale * residual[static_cast<size_t>(j)];
    }
}

EditOutcome rank_one_edit(const models::Model& model, const TokenSeq& query,
                          const TokenSeq& new_answer, std::int64_t subject_pos) {
    require(!model.is_mlp(), "rank_one_edit: transformer model required");
    require(!query.empty() && !new_answer.empty(), "rank_one_edit: empty query or answer");
    require(subject_pos >= 0 && subject_pos < static_cast<std::int64_t>(query.size()),
            "rank_one_edit: subject position outside the query");

    EditOutcome out;
    out.pre_logprob = models::lm_logprob(model, query, new_answer);

    // An FFN-output override at the subject position only reaches the scored
    // logits through the attention of LATER blocks (unless the subject is the
    // final query token, whose own row is scored). Location is therefore
    // restricted to causally effective layers.
    const std::vector<double> profile = down_proj_l1_profile(model, query, new_answer);
    const bool subject_is_scored = subject_pos + 1 >= static_cast<std::int64_t>(query.size());
    const size_t eligible = subject_is_scored ? profile.size() : profile.size() - 1;
    require(eligible >= 1, "rank_one_edit: no down-projection layer can reach the answer logits "
                           "from the subject position");
    out.located_layer = 0;
    for (size_t i = 1; i < eligible; ++i)
        if (profile[i] > profile[static_cast<size_t>(out.located_layer)])
            out.located_layer = static_cast<int>(i);

    // Key and current value from a clean forward over the query alone.
    models::LmHooks capture;
    capture.capture_layer = out.located_layer;
    capture.capture_pos = subject_pos;
    ad::Tape probe;
    models::LeafMap probe_leaves;
    models::LmGraphOut probed = models::build_lm_graph(probe, model, query, probe_leaves,
                                                       /*with_grad=*/false, &capture);
    const std::vector<double> key = probed.captured_ffn_input.data;
    ad::Tensor value = probed.captured_ffn_output;

    // Solve v*: fixed-budget gradient ascent on the target log-probability
    // with the layer output row at the subject position replaced by v.
    for (int step = 0; step < kValueAscentSteps; ++step) {
        ad::Tape tape;
        models::LeafMap leaves;
        ad::Value v = tape.leaf(value, /*force_grad=*/true);
        models::LmHooks hooks;
        hooks.replace_layer = out.located_layer;
        hooks.replace_pos = subject_pos;
        hooks.replacement = v;
        ad::Value lp = models::build_lm_logprob_graph(tape, model, query, new_answer, leaves,
                                                      /*with_grad=*/false, &hooks);
        out.loss_curve.push_back(-tape.value(lp).data[0]);
        tape.backward(lp);
        const ad::Tensor& g = tape.grad(v);
        for (std::int64_t i = 0; i < value.numel(); ++i)
            value.data[i] += kValueAscentStep * g.data[i];
        out.steps_used = step + 1;
    }

    out.model = model;
    apply_rank_one_update(out.model.params.at(model.down_proj.at(static_cast<size_t>(out.located_layer))),
                          key, value.data);
    out.post_logprob = models::lm_logprob(out.model, query, new_answer);
    return out;
}

}  // namespace ripple::editing
