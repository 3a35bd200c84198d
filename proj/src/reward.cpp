#include "pixforge/reward.hpp"

#include <cmath>
#include <stdexcept>

namespace pixforge::reward {

AttentionSource parse_attention_source(const std::string& name) {
  if (name == "policy") return AttentionSource::policy;
  if (name == "frozen_reference") return AttentionSource::frozen_reference;
  throw std::invalid_argument("unknown attention source '" + name + "' (expected policy or frozen_reference)");
}

std::string name_of(AttentionSource s) { return s == AttentionSource::policy ? "policy" : "frozen_reference"; }

AggregatedAttention aggregate_attention(const AttentionRecord& record, const std::vector<bool>& relevant,
                                        std::size_t grid_h, std::size_t grid_w) {
  if (record.empty()) throw std::invalid_argument("aggregate_attention: empty attention record");
  const std::size_t pixels = grid_h * grid_w;
  const std::size_t tokens = relevant.size();
  std::size_t n_relevant = 0;
  for (bool r : relevant) n_relevant += r ? 1 : 0;
  if (n_relevant == 0) throw std::invalid_argument("aggregate_attention: no attention-relevant token");

  AggregatedAttention out{grid_h, grid_w, std::vector<double>(pixels, 0.0), n_relevant, record.size()};
  std::vector<double> per_token(pixels * tokens);
  for (std::size_t s = 0; s < record.size(); ++s) {
    const auto& blocks = record[s];
    if (blocks.empty()) throw std::invalid_argument("aggregate_attention: step " + std::to_string(s) + " has no blocks");
    std::fill(per_token.begin(), per_token.end(), 0.0);
    for (const auto& block : blocks) {
      if (block.size() != pixels * tokens)
        throw std::invalid_argument("aggregate_attention: block of " + std::to_string(block.size()) +
                                    " weights, expected " + std::to_string(pixels) + "x" + std::to_string(tokens));
      for (std::size_t i = 0; i < block.size(); ++i) per_token[i] += block[i] / static_cast<double>(blocks.size());
    }
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t k = 0; k < tokens; ++k)
        if (relevant[k]) out.values[p] += per_token[p * tokens + k] / static_cast<double>(record.size());
  }
  for (double& v : out.values) v /= static_cast<double>(n_relevant);
  return out;
}

double attention_loss(const world::AttentionMap& ground_truth, const AggregatedAttention& model) {
  if (ground_truth.height != model.height || ground_truth.width != model.width ||
      ground_truth.values.size() != model.values.size())
    throw std::invalid_argument("attention_loss: maps differ in resolution");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < model.values.size(); ++i) {
    dot += ground_truth.values[i] * model.values[i];
    na += ground_truth.values[i] * ground_truth.values[i];
    nb += model.values[i] * model.values[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("attention_loss: zero-norm attention map");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

ClipLoss clip_loss(const Image& source, const Image& output, double tau) {
  require_same_shape("clip_loss", source, output);
  if (source.size() == 0) throw std::invalid_argument("clip_loss: empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) s += std::abs(source.pixels[i] - output.pixels[i]);
  ClipLoss c;
  c.mae = s / static_cast<double>(source.size());
  c.l_clip = c.mae > tau ? c.mae : 0.0;
  return c;
}

RewardBreakdown total_reward(double l_att, const ClipLoss& clip, double alpha, bool include_attention) {
  RewardBreakdown r;
  r.l_att = l_att;
  r.mae = clip.mae;
  r.l_clip = clip.l_clip;
  r.alpha = alpha;
  r.attention_weight = include_attention ? 1.0 : 0.0;
  r.total = include_attention ? l_att + alpha * clip.l_clip : alpha * clip.l_clip;
  return r;
}

RewardBreakdown compute_reward(const RewardConfig& config, const world::AttentionMap& ground_truth,
                               const AggregatedAttention& model, const Image& source, const Image& output) {
  return total_reward(attention_loss(ground_truth, model), clip_loss(source, output, config.tau), config.alpha,
                      config.include_attention);
}

}  // namespace pixforge::reward
