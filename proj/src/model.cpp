#include "ripple/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace ripple::models {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

void MlpConfig::validate() const {
    require(input_dim >= 1, "MlpConfig: input_dim must be >= 1");
    require(width >= 1, "MlpConfig: width must be >= 1");
    require(depth >= 1, "MlpConfig: depth must be >= 1");
    require(heads == 2, "MlpConfig: exactly two heads (f and f') are supported");
}

void LmConfig::validate() const {
    require(vocab_size >= 2, "LmConfig: vocab_size must be >= 2");
    require(d_model >= 1 && n_layers >= 1 && n_heads >= 1 && d_ff >= 1 && max_seq_len >= 2,
            "LmConfig: all dimensions must be positive");
    require(d_model % n_heads == 0, "LmConfig: d_model must be divisible by n_heads");
    require(eos_token_id >= 0 && eos_token_id < vocab_size, "LmConfig: eos_token_id out of range");
}

void TrainConfig::validate() const {
    require(steps >= 0, "TrainConfig: steps must be >= 0");
    require(lr >= 0.0, "TrainConfig: learning rate must be >= 0");
}

std::int64_t Model::param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

Model init_model(const MlpConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.config = cfg;
    Rng rng(seed);
    std::int64_t fan_in = cfg.input_dim;
    for (int l = 0; l < cfg.depth; ++l) {
        ad::Tensor w = ad::Tensor::randn({fan_in, cfg.width}, rng);
        w.requires_grad = true;
        const std::string name = "trunk." + std::to_string(l) + ".weight";
        m.params.emplace(name, std::move(w));
        m.layer_names.push_back("trunk." + std::to_string(l));
        m.layer_params.push_back({name});
        fan_in = cfg.width;
    }
    std::vector<std::string> head_names;
    for (int h = 0; h < cfg.heads; ++h) {
        ad::Tensor w = ad::Tensor::randn({cfg.width, 1}, rng);
        w.requires_grad = true;
        const std::string name = "head." + std::to_string(h) + ".weight";
        m.params.emplace(name, std::move(w));
        head_names.push_back(name);
    }
    m.layer_names.push_back("heads");
    m.layer_params.push_back(head_names);
    return m;
}

Model init_model(const LmConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.config = cfg;
    Rng rng(seed);
    const double std_init = 0.02;

    auto weight = [&](const std::string& name, ad::Shape shape) {
        ad::Tensor t = ad::Tensor::randn(std::move(shape), rng, std_init);
        t.requires_grad = true;
        m.params.emplace(name, std::move(t));
    };
    auto norm_params = [&](const std::string& prefix) {
        ad::Tensor gain = ad::Tensor::full({cfg.d_model}, 1.0);
        gain.requires_grad = true;
        ad::Tensor bias = ad::Tensor::zeros({cfg.d_model});
        bias.requires_grad = true;
        m.params.emplace(prefix + ".gain", std::move(gain));
        m.params.emplace(prefix + ".bias", std::move(bias));
    };

    weight("tok_emb.weight", {cfg.vocab_size, cfg.d_model});
    weight("pos_emb.weight", {cfg.max_seq_len, cfg.d_model});
    m.layer_names.push_back("embeddings");
    m.layer_params.push_back({"pos_emb.weight", "tok_emb.weight"});

    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string b = "blocks." + std::to_string(l) + ".";
        norm_params(b + "attn_norm");
        weight(b + "attn.wq.weight", {cfg.d_model, cfg.d_model});
        weight(b + "attn.wk.weight", {cfg.d_model, cfg.d_model});
        weight(b + "attn.wv.weight", {cfg.d_model, cfg.d_model});
        weight(b + "attn.wo.weight", {cfg.d_model, cfg.d_model});
        norm_params(b + "ffn_norm");
        weight(b + "ffn.up_proj.weight", {cfg.d_model, cfg.d_ff});
        weight(b + "ffn.down_proj.weight", {cfg.d_ff, cfg.d_model});
        m.down_proj.push_back(b + "ffn.down_proj.weight");
        m.layer_names.push_back("blocks." + std::to_string(l));
        m.layer_params.push_back({b + "attn.wq.weight", b + "attn.wk.weight", b + "attn.wv.weight",
                                  b + "attn.wo.weight", b + "attn_norm.bias", b + "attn_norm.gain",
                                  b + "ffn.down_proj.weight", b + "ffn.up_proj.weight",
                                  b + "ffn_norm.bias", b + "ffn_norm.gain"});
    }

    norm_params("final_norm");
    weight("lm_head.weight", {cfg.d_model, cfg.vocab_size});
    m.layer_names.push_back("final");
    m.layer_params.push_back({"final_norm.bias", "final_norm.gain", "lm_head.weight"});
    return m;
}

ad::Value bind_param(ad::Tape& tape, const Model& model, LeafMap& leaves,
                     const std::string& name, bool with_grad) {
    auto it = leaves.find(name);
    if (it != leaves.end()) return it->second;
    auto pit = model.params.find(name);
    if (pit == model.params.end())
        throw std::invalid_argument("unbound parameter leaf '" + name + "'");
    ad::Value v = tape.leaf(pit->second, with_grad && pit->second.requires_grad);
    leaves.emplace(name, v);
    return v;
}

ad::Value build_mlp_graph(ad::Tape& tape, const Model& model, const ad::Tensor& inputs,
                          LeafMap& leaves, bool with_grad) {
    const MlpConfig& cfg = model.mlp();
    require(inputs.rank() == 2 && inputs.shape[1] == cfg.input_dim,
            "mlp_forward: inputs must be [batch, input_dim]");
    ad::Value h = tape.constant(inputs);
    std::int64_t fan_in = cfg.input_dim;
    for (int l = 0; l < cfg.depth; ++l) {
        ad::Value w = bind_param(tape, model, leaves, "trunk." + std::to_string(l) + ".weight", with_grad);
        ad::Value z = tape.scalar_mul(tape.matmul(h, w), 1.0 / std::sqrt(static_cast<double>(fan_in)));
        h = cfg.activation == Activation::Tanh ? tape.tanh(z) : tape.relu(z);
        fan_in = cfg.width;
    }
    std::vector<ad::Value> outs;
    for (int k = 0; k < cfg.heads; ++k) {
        ad::Value w = bind_param(tape, model, leaves, "head." + std::to_string(k) + ".weight", with_grad);
        outs.push_back(tape.scalar_mul(tape.matmul(h, w), 1.0 / std::sqrt(static_cast<double>(cfg.width))));
    }
    return tape.concat_cols(outs);
}

ad::Tensor mlp_forward(const Model& model, const ad::Tensor& inputs) {
    ad::Tape tape;
    LeafMap leaves;
    ad::Value out = build_mlp_graph(tape, model, inputs, leaves, /*with_grad=*/false);
    return tape.value(out);
}

namespace {

// Additive causal mask: 0 on and below the diagonal, -1e9 above.
ad::Tensor causal_mask(std::int64_t s) {
    ad::Tensor m({s, s});
    for (std::int64_t i = 0; i < s; ++i)
        for (std::int64_t j = i + 1; j < s; ++j) m.data[i * s + j] = -1e9;
    return m;
}

ad::Value pre_norm(ad::Tape& tape, const Model& model, LeafMap& leaves, bool with_grad,
                   ad::Value x, const std::string& prefix) {
    ad::Value g = bind_param(tape, model, leaves, prefix + ".gain", with_grad);
    ad::Value b = bind_param(tape, model, leaves, prefix + ".bias", with_grad);
    return tape.add(tape.mul(tape.layer_norm(x), g), b);
}

}  // namespace

LmGraphOut build_lm_graph(ad::Tape& tape, const Model& model, const TokenSeq& tokens,
                          LeafMap& leaves, bool with_grad, const LmHooks* hooks) {
    const LmConfig& cfg = model.lm();
    const std::int64_t s = static_cast<std::int64_t>(tokens.size());
    require(s >= 1, "lm forward: empty token sequence");
    require(s <= cfg.max_seq_len, "lm forward: sequence of length " + std::to_string(s) +
                                      " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    for (auto t : tokens)
        require(t >= 0 && t < cfg.vocab_size, "lm forward: unknown token id " + std::to_string(t));

    LmGraphOut out;
    ad::Value tok = bind_param(tape, model, leaves, "tok_emb.weight", with_grad);
    ad::Value pos = bind_param(tape, model, leaves, "pos_emb.weight", with_grad);
    std::vector<std::int64_t> positions(static_cast<size_t>(s));
    for (std::int64_t i = 0; i < s; ++i) positions[static_cast<size_t>(i)] = i;
    ad::Value x = tape.add(tape.embedding(tok, tokens), tape.embedding(pos, positions));

    const std::int64_t hd = cfg.d_model / cfg.n_heads;
    ad::Value mask = tape.constant(causal_mask(s));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string b = "blocks." + std::to_string(l) + ".";
        // attention sublayer
        ad::Value h = pre_norm(tape, model, leaves, with_grad, x, b + "attn_norm");
        ad::Value q = tape.matmul(h, bind_param(tape, model, leaves, b + "attn.wq.weight", with_grad));
        ad::Value k = tape.matmul(h, bind_param(tape, model, leaves, b + "attn.wk.weight", with_grad));
        ad::Value v = tape.matmul(h, bind_param(tape, model, leaves, b + "attn.wv.weight", with_grad));
        std::vector<ad::Value> head_outs;
        for (int hidx = 0; hidx < cfg.n_heads; ++hidx) {
            const std::int64_t c0 = hidx * hd, c1 = (hidx + 1) * hd;
            ad::Value qh = tape.slice_cols(q, c0, c1);
            ad::Value kh = tape.slice_cols(k, c0, c1);
            ad::Value vh = tape.slice_cols(v, c0, c1);
            ad::Value scores = tape.scalar_mul(tape.matmul(qh, tape.transpose(kh)),
                                               1.0 / std::sqrt(static_cast<double>(hd)));
            ad::Value attn = tape.softmax(tape.add(scores, mask));
            head_outs.push_back(tape.matmul(attn, vh));
        }
        ad::Value attn_out = tape.matmul(tape.concat_cols(head_outs),
                                         bind_param(tape, model, leaves, b + "attn.wo.weight", with_grad));
        x = tape.add(x, attn_out);

        // feed-forward sublayer
        ad::Value h2 = pre_norm(tape, model, leaves, with_grad, x, b + "ffn_norm");
        ad::Value hidden = tape.relu(tape.matmul(h2, bind_param(tape, model, leaves, b + "ffn.up_proj.weight", with_grad)));
        ad::Value ffn_out = tape.matmul(hidden, bind_param(tape, model, leaves, b + "ffn.down_proj.weight", with_grad));

        if (hooks && hooks->capture_layer == l) {
            require(hooks->capture_pos >= 0 && hooks->capture_pos < s, "lm hooks: capture position out of range");
            const ad::Tensor& ht = tape.value(hidden);
            const ad::Tensor& ot = tape.value(ffn_out);
            out.captured_ffn_input = ad::Tensor({cfg.d_ff});
            out.captured_ffn_output = ad::Tensor({cfg.d_model});
            std::copy_n(ht.data.data() + hooks->capture_pos * cfg.d_ff, cfg.d_ff,
                        out.captured_ffn_input.data.data());
            std::copy_n(ot.data.data() + hooks->capture_pos * cfg.d_model, cfg.d_model,
                        out.captured_ffn_output.data.data());
        }
        if (hooks && hooks->replace_layer == l) {
            require(hooks->replace_pos >= 0 && hooks->replace_pos < s, "lm hooks: replace position out of range");
            require(hooks->replacement.valid(), "lm hooks: replacement value not set");
            ffn_out = tape.replace_row(ffn_out, hooks->replace_pos, hooks->replacement);
        }
        x = tape.add(x, ffn_out);
    }

    ad::Value xf = pre_norm(tape, model, leaves, with_grad, x, "final_norm");
    out.logits = tape.matmul(xf, bind_param(tape, model, leaves, "lm_head.weight", with_grad));
    return out;
}

ad::Value build_lm_logprob_graph(ad::Tape& tape, const Model& model, const TokenSeq& query,
                                 const TokenSeq& answer, LeafMap& leaves, bool with_grad,
                                 const LmHooks* hooks) {
    require(!query.empty(), "lm_logprob: empty query");
    require(!answer.empty(), "lm_logprob: empty answer");
    TokenSeq tokens = query;
    tokens.insert(tokens.end(), answer.begin(), answer.end());
    LmGraphOut g = build_lm_graph(tape, model, tokens, leaves, with_grad, hooks);
    const std::int64_t qn = static_cast<std::int64_t>(query.size());
    const std::int64_t an = static_cast<std::int64_t>(answer.size());
    ad::Value rows = tape.slice_rows(g.logits, qn - 1, qn + an - 1);
    ad::Value nll = tape.cross_entropy(rows, answer);
    return tape.scalar_mul(nll, -1.0);
}

double lm_logprob(const Model& model, const TokenSeq& query, const TokenSeq& answer) {
    ad::Tape tape;
    LeafMap leaves;
    ad::Value lp = build_lm_logprob_graph(tape, model, query, answer, leaves, /*with_grad=*/false);
    return tape.value(lp).data[0];
}

TokenSeq sample_generate(const Model& model, const TokenSeq& query, double temperature,
                         std::int64_t max_len, std::uint64_t seed, bool greedy) {
    const LmConfig& cfg = model.lm();
    require(greedy || temperature > 0.0, "sample_generate: temperature must be positive");
    require(max_len >= 1, "sample_generate: max_len must be >= 1");
    require(!query.empty(), "sample_generate: empty query");

    Rng rng(seed);
    TokenSeq tokens = query;
    TokenSeq generated;
    for (std::int64_t step = 0; step < max_len; ++step) {
        if (static_cast<std::int64_t>(tokens.size()) >= cfg.max_seq_len) break;
        ad::Tape tape;
        LeafMap leaves;
        LmGraphOut g = build_lm_graph(tape, model, tokens, leaves, /*with_grad=*/false);
        const ad::Tensor& logits = tape.value(g.logits);
        const std::int64_t V = cfg.vocab_size;
        const double* row = logits.data.data() + (logits.shape[0] - 1) * V;

        std::int64_t next = 0;
        if (greedy) {
            for (std::int64_t j = 1; j < V; ++j)
                if (row[j] > row[next]) next = j;
        } else {
            // softmax over logits/T, then inverse-CDF draw
            double mx = row[0];
            for (std::int64_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
            std::vector<double> p(static_cast<size_t>(V));
            double z = 0.0;
            for (std::int64_t j = 0; j < V; ++j) {
                p[static_cast<size_t>(j)] = std::exp((row[j] - mx) / temperature);
                z += p[static_cast<size_t>(j)];
            }
            const double u = rng.uniform() * z;
            double acc = 0.0;
            next = V - 1;
            for (std::int64_t j = 0; j < V; ++j) {
                acc += p[static_cast<size_t>(j)];
                if (u < acc) {
                    next = j;
                    break;
                }
            }
        }
        if (next == cfg.eos_token_id) break;
        generated.push_back(next);
        tokens.push_back(next);
    }
    return generated;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct AdamState {
    ad::NamedParams m, v;
    std::int64_t t = 0;
};

void apply_update(Model& model, const std::map<std::string, const ad::Tensor*>& grads,
                  const TrainConfig& cfg, AdamState& adam) {
    if (cfg.optimizer == Optimizer::Gd) {
        for (const auto& [name, g] : grads) {
            ad::Tensor& p = model.params.at(name);
            for (std::int64_t i = 0; i < p.numel(); ++i) p.data[i] -= cfg.lr * g->data[i];
        }
        return;
    }
    adam.t += 1;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
    for (const auto& [name, g] : grads) {
        ad::Tensor& p = model.params.at(name);
        ad::Tensor& m = adam.m.emplace(name, ad::Tensor::zeros(p.shape)).first->second;
        ad::Tensor& v = adam.v.emplace(name, ad::Tensor::zeros(p.shape)).first->second;
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double gi = g->data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            p.data[i] -= cfg.lr * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + cfg.adam_eps);
        }
    }
}

[[noreturn]] void report_divergence(std::int64_t step, double loss) {
    throw std::runtime_error("training diverged at step " + std::to_string(step) +
                             " (loss=" + std::to_string(loss) + ")");
}

constexpr double kDivergenceCeiling = 1e6;

}  // namespace

TrainResult train(const Model& model, const ad::Tensor& inputs,
                  const std::vector<double>& targets, const TrainConfig& cfg) {
    cfg.validate();
    require(model.is_mlp(), "train(mlp): model is not an MLP");
    require(inputs.rank() == 2, "train(mlp): inputs must be [batch, input_dim]");
    const std::int64_t m = inputs.shape[0];
    require(m >= 1, "train(mlp): empty dataset");
    require(static_cast<std::int64_t>(targets.size()) == m, "train(mlp): one target per input row required");
    require(cfg.optimizer == Optimizer::Gd, "train(mlp): plain GD only; Adam is limited to LM pretraining");

    // Mapping condition: duplicate inputs with conflicting targets are not a function.
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = i + 1; j < m; ++j) {
            bool same = true;
            for (std::int64_t c = 0; c < inputs.shape[1] && same; ++c)
                same = inputs.at(i, c) == inputs.at(j, c);
            if (same && targets[static_cast<size_t>(i)] != targets[static_cast<size_t>(j)])
                throw std::invalid_argument("train(mlp): duplicate inputs with conflicting targets (rows " +
                                            std::to_string(i) + ", " + std::to_string(j) + ")");
        }

    TrainResult res;
    res.model = model;
    res.stop_reason = "steps";
    ad::Tensor y({m, 1});
    for (std::int64_t i = 0; i < m; ++i) y.data[i] = targets[static_cast<size_t>(i)];

    AdamState adam;
    for (std::int64_t t = 0; t < cfg.steps; ++t) {
        ad::Tape tape;
        LeafMap leaves;
        ad::Value out = build_mlp_graph(tape, res.model, inputs, leaves, /*with_grad=*/true);
        ad::Value f = tape.slice_cols(out, 0, 1);
        ad::Value loss = tape.scalar_mul(tape.squared_error(f, tape.constant(y)), 0.5);
        const double loss_val = tape.value(loss).data[0];
        if (loss_val > kDivergenceCeiling) report_divergence(t, loss_val);
        res.loss_curve.push_back(loss_val);
        if (cfg.stop_loss > 0.0 && loss_val <= cfg.stop_loss) {
            res.stop_reason = "loss_threshold";
            break;
        }
        tape.backward(loss);
        std::map<std::string, const ad::Tensor*> grads;
        for (const auto& [name, leaf] : leaves)
            if (tape.has_grad(leaf)) grads.emplace(name, &tape.grad(leaf));
        apply_update(res.model, grads, cfg, adam);
        res.steps_run = t + 1;
    }
    return res;
}

TrainResult train(const Model& model, const std::vector<LmExample>& data,
                  const TrainConfig& cfg) {
    cfg.validate();
    require(!model.is_mlp(), "train(lm): model is not a language model");
    require(!data.empty(), "train(lm): empty dataset");
    const LmConfig& lm_cfg = model.lm();

    std::int64_t total_targets = 0;
    std::map<TokenSeq, const TokenSeq*> seen;
    for (const auto& ex : data) {
        require(!ex.query.empty(), "train(lm): empty query");
        require(!ex.answer.empty(), "train(lm): empty answer");
        require(static_cast<std::int64_t>(ex.query.size() + ex.answer.size()) + 0 <= lm_cfg.max_seq_len,
                "train(lm): example exceeds max_seq_len");
        auto [it, inserted] = seen.emplace(ex.query, &ex.answer);
        if (!inserted && *it->second != ex.answer)
            throw std::invalid_argument("train(lm): duplicate query with conflicting answers");
        total_targets += static_cast<std::int64_t>(ex.answer.size()) + 1;  // + EOS
    }

    TrainResult res;
    res.model = model;
    res.stop_reason = "steps";
    AdamState adam;
    for (std::int64_t t = 0; t < cfg.steps; ++t) {
        ad::Tape tape;
        LeafMap leaves;
        ad::Value total{};
        for (const auto& ex : data) {
            TokenSeq tokens = ex.query;
            tokens.insert(tokens.end(), ex.answer.begin(), ex.answer.end());
            LmGraphOut g = build_lm_graph(tape, res.model, tokens, leaves, /*with_grad=*/true);
            const std::int64_t qn = static_cast<std::int64_t>(ex.query.size());
            const std::int64_t an = static_cast<std::int64_t>(ex.answer.size());
            // rows qn-1 .. qn+an-1 predict the answer tokens then EOS
            ad::Value rows = tape.slice_rows(g.logits, qn - 1, qn + an);
            TokenSeq targets = ex.answer;
            targets.push_back(lm_cfg.eos_token_id);
            ad::Value nll = tape.cross_entropy(rows, targets);
            total = total.valid() ? tape.add(total, nll) : nll;
        }
        ad::Value loss = tape.scalar_mul(total, 1.0 / static_cast<double>(total_targets));
        const double loss_val = tape.value(loss).data[0];
        if (loss_val > kDivergenceCeiling) report_divergence(t, loss_val);
        res.loss_curve.push_back(loss_val);
        if (cfg.stop_loss > 0.0 && loss_val <= cfg.stop_loss) {
            res.stop_reason = "loss_threshold";
            break;
        }
        tape.backward(loss);
        std::map<std::string, const ad::Tensor*> grads;
        for (const auto& [name, leaf] : leaves)
            if (tape.has_grad(leaf)) grads.emplace(name, &tape.grad(leaf));
        apply_update(res.model, grads, cfg, adam);
        res.steps_run = t + 1;
    }
    return res;
}

}  // namespace ripple::models
