#pragma once

// Attention-alignment reward: cosine similarity between the mask-derived
// attention map and the model's token- and time-averaged cross-attention,
// plus a thresholded pixel-drift penalty.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pixforge/image.hpp"
#include "pixforge/world.hpp"

namespace pixforge::reward {

// record[step][block] is a row-major (pixels x tokens) weight matrix.
using AttentionRecord = std::vector<std::vector<std::vector<double>>>;

struct AggregatedAttention {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  std::size_t token_count = 0;
  std::size_t step_count = 0;
};

struct RewardBreakdown {
  double l_att = 0.0;
  double mae = 0.0;
  double l_clip = 0.0;
  double alpha = -1.0;
  double attention_weight = 1.0;  // 0 drops the attention term (clip-only ablation)
  double total = 0.0;
};

enum class AttentionSource { policy, frozen_reference };
AttentionSource parse_attention_source(const std::string& name);
std::string name_of(AttentionSource s);

struct RewardConfig {
  double tau = 0.05;
  double alpha = -1.0;
  bool include_attention = true;
  AttentionSource attention_source = AttentionSource::policy;
};

// Mean over steps, then over the attention-relevant tokens; cross-attention
// blocks are averaged uniformly. `grid_h * grid_w` must equal the pixel count.
AggregatedAttention aggregate_attention(const AttentionRecord& record, const std::vector<bool>& relevant,
                                        std::size_t grid_h, std::size_t grid_w);

double attention_loss(const world::AttentionMap& ground_truth, const AggregatedAttention& model);

struct ClipLoss {
  double mae = 0.0;
  double l_clip = 0.0;
};
ClipLoss clip_loss(const Image& source, const Image& output, double tau);

RewardBreakdown total_reward(double l_att, const ClipLoss& clip, double alpha, bool include_attention = true);

RewardBreakdown compute_reward(const RewardConfig& config, const world::AttentionMap& ground_truth,
                               const AggregatedAttention& model, const Image& source, const Image& output);

}  // namespace pixforge::reward
