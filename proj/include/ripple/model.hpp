#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "ripple/grad_vector.hpp"
#include "ripple/tape.hpp"
#include "ripple/tensor.hpp"

namespace ripple::models {

using TokenSeq = std::vector<std::int64_t>;

enum class Activation { Tanh, Relu };

// NTK-parameterized MLP: unit-normal parameters, 1/sqrt(fan_in) scaling
// applied in the forward function. Two scalar readout heads share the trunk.
struct MlpConfig {
    std::int64_t input_dim = 1;
    std::int64_t width = 1;     // hidden width n
    int depth = 1;              // number of hidden layers
    int heads = 2;
    Activation activation = Activation::Tanh;

    void validate() const;
};

// Decoder-only transformer: learned positions, pre-norm blocks, untied head.
struct LmConfig {
    std::int64_t vocab_size = 0;
    std::int64_t d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    std::int64_t d_ff = 128;
    std::int64_t max_seq_len = 32;
    std::int64_t eos_token_id = 0;

    void validate() const;
};

struct Model {
    std::variant<MlpConfig, LmConfig> config;
    ad::NamedParams params;
    // Ordered layer partition of the parameter set; covers every parameter.
    std::vector<std::string> layer_names;
    std::vector<std::vector<std::string>> layer_params;
    // Transformer: designated down-projection parameter, one per block.
    std::vector<std::string> down_proj;

    bool is_mlp() const { return std::holds_alternative<MlpConfig>(config); }
    const MlpConfig& mlp() const { return std::get<MlpConfig>(config); }
    const LmConfig& lm() const { return std::get<LmConfig>(config); }
    std::int64_t param_count() const;
};

Model init_model(const MlpConfig& cfg, std::uint64_t seed);
Model init_model(const LmConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Graph builders. Parameter leaves are bound once per tape and shared, so a
// backward() pass accumulates gradients over everything built on the tape.
// ---------------------------------------------------------------------------

using LeafMap = std::map<std::string, ad::Value>;

ad::Value bind_param(ad::Tape& tape, const Model& model, LeafMap& leaves,
                     const std::string& name, bool with_grad);

// MLP trunk + both heads; returns [batch, heads].
ad::Value build_mlp_graph(ad::Tape& tape, const Model& model, const ad::Tensor& inputs,
                          LeafMap& leaves, bool with_grad);

// Optional intervention points for the editing module.
struct LmHooks {
    int replace_layer = -1;          // block whose FFN output row is overridden
    std::int64_t replace_pos = 0;
    ad::Value replacement{};         // [d_model]
    int capture_layer = -1;          // block whose FFN hidden row is captured
    std::int64_t capture_pos = 0;
};

struct LmGraphOut {
    ad::Value logits;                // [seq, vocab]
    ad::Tensor captured_ffn_input;   // [d_ff] row, when capture_layer >= 0
    ad::Tensor captured_ffn_output;  // [d_model] row, when capture_layer >= 0
};

LmGraphOut build_lm_graph(ad::Tape& tape, const Model& model, const TokenSeq& tokens,
                          LeafMap& leaves, bool with_grad, const LmHooks* hooks = nullptr);

// Scalar log P(answer | query): sum of gold-token log-softmax terms.
ad::Value build_lm_logprob_graph(ad::Tape& tape, const Model& model, const TokenSeq& query,
                                 const TokenSeq& answer, LeafMap& leaves, bool with_grad,
                                 const LmHooks* hooks = nullptr);

// ---------------------------------------------------------------------------
// Plain evaluation
// ---------------------------------------------------------------------------

ad::Tensor mlp_forward(const Model& model, const ad::Tensor& inputs);  // [batch, heads]

double lm_logprob(const Model& model, const TokenSeq& query, const TokenSeq& answer);

// Autoregressive sampling; stops at EOS (excluded from the result) or after
// max_len tokens. greedy=true takes argmax instead (ties to lowest id).
TokenSeq sample_generate(const Model& model, const TokenSeq& query, double temperature,
                         std::int64_t max_len, std::uint64_t seed, bool greedy = false);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class Optimizer { Gd, Adam };

struct TrainConfig {
    std::int64_t steps = 0;
    double lr = 0.0;
    Optimizer optimizer = Optimizer::Gd;  // Adam allowed for LM pretraining only
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    // Early stop on loss (<= threshold) when > 0; used by the NTK harness.
    double stop_loss = 0.0;

    void validate() const;
};

struct TrainResult {
    Model model;
    std::vector<double> loss_curve;  // loss at theta(t) before each update
    std::int64_t steps_run = 0;
    std::string stop_reason;         // "steps" or "loss_threshold"
};

struct LmExample {
    TokenSeq query;
    TokenSeq answer;
};

// Full-batch GD on head f with loss 0.5*||f(X) - Y||^2.
TrainResult train(const Model& model, const ad::Tensor& inputs,
                  const std::vector<double>& targets, const TrainConfig& cfg);

// Full-batch cross-entropy on answer tokens plus EOS, averaged per token.
TrainResult train(const Model& model, const std::vector<LmExample>& data,
                  const TrainConfig& cfg);

}  // namespace ripple::models
