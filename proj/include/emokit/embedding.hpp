#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emokit/graph.hpp"
#include "emokit/tensor.hpp"

namespace emokit {

inline constexpr std::size_t kStimuliPerItem = 3;

// Paired visual/textual embedding views for a batch of n items. All embedding
// rows are expected to be unit-normalized (see normalize_batch).
struct EmbeddingBatch {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t m_p = 0;
  Tensor image_global;   // (n, d)
  Tensor image_patches;  // (n, m_p, d)
  Tensor text_full;      // (n, d)
  Tensor text_summary;   // (n, d)
  Tensor text_stimuli;   // (n, 3, d)
  double tau = 0.1;

  void validate() const;  // shape and invariant checks
};

// Row-normalizes every view; idempotent. A zero-norm row raises an error
// naming the view and item index.
EmbeddingBatch normalize_batch(EmbeddingBatch batch);

// S[i][j] = dot(A_i, B_j); cosine similarities when rows are unit-normalized.
Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b);

// Single linear projection standing in for a CLIP encoder.
struct ToyEncoder {
  enum class Role { Visual, Text };
  Tensor weight;  // (d_in, d)
  Role role = Role::Visual;

  static ToyEncoder random(std::size_t d_in, std::size_t d, Role role, std::uint64_t seed);
};

// Linear map then row normalization. Rows of `raw` may have any leading
// shape; the last axis must equal the encoder input dimension.
Tensor encode(const ToyEncoder& enc, const Tensor& raw);

// Graph version used by the trainer; `weight` may be a trainable input.
ad::NodeId encode_node(ad::Graph& g, ad::NodeId weight, ad::NodeId raw);

// Desk-scale synthetic stand-in for a captioned image corpus: paired raw
// visual/text vectors drawn from shared cluster anchors plus item-specific
// offsets, with three stimulus directions per item mirrored between patches
// and stimulus texts. The pairing is the identity permutation.
struct SyntheticDataset {
  std::size_t n = 0;
  std::size_t d_raw = 0;
  std::size_t d = 0;  // suggested embedding dimension for training
  std::size_t m_p = 0;
  std::size_t n_clusters = 0;
  double noise = 0.0;
  std::uint64_t seed = 0;

  Tensor image_global_raw;   // (n, d_raw)
  Tensor image_patches_raw;  // (n, m_p, d_raw)
  Tensor text_full_raw;      // (n, d_raw)
  Tensor text_summary_raw;   // (n, d_raw)
  Tensor text_stimuli_raw;   // (n, 3, d_raw)
  Tensor cluster_text_raw;   // (n_clusters, d_raw) zero-shot class prototypes
  std::vector<std::size_t> cluster_labels;  // (n)

  SyntheticDataset subset(const std::vector<std::size_t>& items) const;
};

SyntheticDataset make_synthetic_dataset(std::size_t n_items, std::size_t d_raw, std::size_t d,
                                        std::size_t n_clusters, double noise, std::uint64_t seed,
                                        std::size_t m_p = 16);

// JSONL dataset files: a header line followed by one item per line.
void write_dataset_jsonl(const std::string& path, const SyntheticDataset& ds);
SyntheticDataset read_dataset_jsonl(const std::string& path);

// JSONL embedding-batch files: one item per line with keys
// {id, image_global, image_patches, text_full, text_summary, text_stimuli}.
void write_batch_jsonl(const std::string& path, const EmbeddingBatch& batch);
EmbeddingBatch read_batch_jsonl(const std::string& path);

}  // namespace emokit
