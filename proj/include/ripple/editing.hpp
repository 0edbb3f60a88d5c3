#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ripple/gradsim.hpp"
#include "ripple/model.hpp"

namespace ripple::editing {

using TokenSeq = models::TokenSeq;

enum class Method { Finetune, RankOne };

struct EditConfig {
    Method method = Method::Finetune;
    std::int64_t steps = 100;  // finetune only; rank_one ignores it
    double lr = 0.5;
    bool auto_ntk_lr = false;  // MLP edits only: eta = 2/((lmin+lmax)*n) on D_KE
    gradsim::ParamFilter filter = gradsim::all_params();
    std::string filter_desc = "all";

    void validate() const;
};

struct EditOutcome {
    models::Model model;
    // LM edits: log P(a'_x | q_x) summed over the edit set, on the original
    // model (pre) and the edited one (post).
    double pre_logprob = 0.0;
    double post_logprob = 0.0;
    int located_layer = -1;  // rank_one only
    std::int64_t steps_used = 0;
    std::vector<double> loss_curve;
};

// Exactly `steps` full-batch GD steps of cross-entropy on the edit examples
// (answer tokens plus EOS). Parameters failing the filter never change.
EditOutcome finetune_edit(const models::Model& model, const std::vector<models::LmExample>& edit_set,
                          const EditConfig& config);

// Regression form of the same process on MLP head f: 0.5*||f(W) - Z||^2.
EditOutcome finetune_edit(const models::Model& model, const ad::Tensor& edit_inputs,
                          const std::vector<double>& edit_targets, const EditConfig& config);

// Down-projection layer with the largest L1 mass of grad log P(a|q); ties go
// to the lowest index. Transformer models only.
int locate_layer(const models::Model& model, const TokenSeq& query, const TokenSeq& answer);

// Simplified locate-then-edit rank-one update: reads the key k* at the final
// subject token, solves the value v* by 50 gradient-ascent steps (step 0.1)
// on log P(new_answer | query), then forces W k* = v* at the located layer.
EditOutcome rank_one_edit(const models::Model& model, const TokenSeq& query,
                          const TokenSeq& new_answer, std::int64_t subject_pos);

// The exact rank-one algebra, exposed for direct use and testing:
// W += outer(key, value - W^T key) / (key^T key), on a [d_ff, d_model] tensor.
void apply_rank_one_update(ad::Tensor& weight, const std::vector<double>& key,
                           const std::vector<double>& value);

}  // namespace ripple::editing
