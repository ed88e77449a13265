#pragma once

#include <utility>

#include "emokit/embedding.hpp"
#include "emokit/graph.hpp"

namespace emokit {

// Scope of the negatives in the fine-grained denominator. The index bound in
// the source formulation is ambiguous, so both readings are implemented.
enum class NegativePool { WithinImage, BatchWide };

// Default pooling is standard softmax-over-patches cross-attention;
// PaperLiteral keeps the across-stimuli normalizer of the printed formula.
enum class PoolingRule { SoftmaxOverPatches, PaperLiteral };

struct ContrastiveConfig {
  double tau = 0.1;
  NegativePool negative_pool = NegativePool::WithinImage;
  PoolingRule pooling_rule = PoolingRule::SoftmaxOverPatches;
};

// Attention-pooled visual representation per stimulus.
struct RegionRepresentation {
  Tensor values;     // (n, 3, d), rows unit-normalized
  Tensor attention;  // (n, m_p, 3) pooling weights
};

// Symmetric InfoNCE with diagonal targets: (row-direction CE + column-direction
// CE) / 2, each direction averaged over its rows.
double info_nce_symmetric(const Tensor& similarity, double tau);

double global_loss(const EmbeddingBatch& batch);
double summary_loss(const EmbeddingBatch& batch);

// Single-item pooling: returns (region values 3 x d, weights m_p x 3).
std::pair<Tensor, Tensor> cross_attention_pool(const Tensor& patches, const Tensor& stimuli,
                                               const ContrastiveConfig& cfg);

RegionRepresentation pool_regions(const EmbeddingBatch& batch, const ContrastiveConfig& cfg);

double fine_grained_loss(const EmbeddingBatch& batch, const ContrastiveConfig& cfg);

// ---- graph builders shared with the objective module ----

// Normalized embedding views as graph nodes.
struct BatchNodes {
  ad::NodeId image_global;   // (n, d)
  ad::NodeId image_patches;  // (n, m_p, d)
  ad::NodeId text_full;      // (n, d)
  ad::NodeId text_summary;   // (n, d)
  ad::NodeId text_stimuli;   // (n, 3, d)
  std::size_t n = 0, m_p = 0, d = 0;
};

struct RegionNodes {
  ad::NodeId regions_flat;  // (3n, d), item-major, unit rows
  ad::NodeId stimuli_flat;  // (3n, d), item-major
};

ad::NodeId info_nce_node(ad::Graph& g, ad::NodeId similarity, double tau);

RegionNodes build_region_nodes(ad::Graph& g, const BatchNodes& b, const ContrastiveConfig& cfg);

ad::NodeId fine_grained_node(ad::Graph& g, const RegionNodes& r, std::size_t n,
                             const ContrastiveConfig& cfg);

// (3n)x(3n) region-vs-stimulus cosine grid, item-major on both axes.
ad::NodeId region_grid_node(ad::Graph& g, const RegionNodes& r);

}  // namespace emokit
