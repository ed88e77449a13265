#include "emokit/embedding.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "emokit/rng.hpp"

namespace emokit {

namespace {

void check_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(what) + ": expected rank-2 tensor, got " +
                                shape_str(t.shape()));
  }
}

// Normalizes the rows of one view in place; item = row / rows_per_item.
void normalize_view(Tensor& t, const char* view, std::size_t rows_per_item) {
  const std::size_t rows = t.row_count(), cols = t.row_len();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = t.row(r);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += row[j] * row[j];
    const double norm = std::sqrt(s);
    if (norm < 1e-150) {
      throw std::runtime_error(std::string("normalize_batch: zero-norm row in view '") + view +
                               "' at item " + std::to_string(r / rows_per_item));
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= norm;
  }
}

}  // namespace

void EmbeddingBatch::validate() const {
  if (n == 0 || d == 0) throw std::invalid_argument("batch: empty batch");
  if (m_p < 1) throw std::invalid_argument("batch: m_p must be >= 1");
  if (!(tau > 0.0)) throw std::invalid_argument("batch: temperature must be positive");
  auto expect = [](const Tensor& t, const Shape& s, const char* view) {
    if (t.shape() != s) {
      throw std::invalid_argument(std::string("batch: view '") + view + "' has shape " +
                                  shape_str(t.shape()) + ", expected " + shape_str(s));
    }
  };
  expect(image_global, {n, d}, "image_global");
  expect(image_patches, {n, m_p, d}, "image_patches");
  expect(text_full, {n, d}, "text_full");
  expect(text_summary, {n, d}, "text_summary");
  expect(text_stimuli, {n, kStimuliPerItem, d}, "text_stimuli");
}

EmbeddingBatch normalize_batch(EmbeddingBatch batch) {
  batch.validate();
  normalize_view(batch.image_global, "image_global", 1);
  normalize_view(batch.image_patches, "image_patches", batch.m_p);
  normalize_view(batch.text_full, "text_full", 1);
  normalize_view(batch.text_summary, "text_summary", 1);
  normalize_view(batch.text_stimuli, "text_stimuli", kStimuliPerItem);
  return batch;
}

Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b) {
  check_rank2(a, "cosine_similarity_matrix");
  check_rank2(b, "cosine_similarity_matrix");
  if (a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("cosine_similarity_matrix: dimension mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  Tensor s({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += ar[k] * br[k];
      s.at(i, j) = dot;
    }
  }
  return s;
}

ToyEncoder ToyEncoder::random(std::size_t d_in, std::size_t d, Role role, std::uint64_t seed) {
  Rng rng(seed);
  ToyEncoder enc;
  enc.role = role;
  enc.weight = rng.normal_tensor({d_in, d}, 1.0 / std::sqrt(static_cast<double>(d_in)));
  return enc;
}

Tensor encode(const ToyEncoder& enc, const Tensor& raw) {
  check_rank2(enc.weight, "encode: weight");
  if (raw.rank() == 0 || raw.row_len() != enc.weight.dim(0)) {
    throw std::invalid_argument("encode: raw shape " + shape_str(raw.shape()) +
                                " incompatible with weight " + shape_str(enc.weight.shape()));
  }
  const std::size_t rows = raw.row_count(), k = enc.weight.dim(0), d = enc.weight.dim(1);
  Shape os(raw.shape().begin(), raw.shape().end() - 1);
  os.push_back(d);
  Tensor out(os);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = raw.row(r);
    double* dst = out.row(r);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double v = src[kk];
      if (v == 0.0) continue;
      const double* wr = enc.weight.row(kk);
      for (std::size_t j = 0; j < d; ++j) dst[j] += v * wr[j];
    }
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += dst[j] * dst[j];
    const double norm = std::sqrt(s);
    if (norm < 1e-150) {
      throw std::runtime_error("encode: zero post-projection row at index " + std::to_string(r));
    }
    for (std::size_t j = 0; j < d; ++j) dst[j] /= norm;
  }
  return out;
}

ad::NodeId encode_node(ad::Graph& g, ad::NodeId weight, ad::NodeId raw) {
  return g.l2_normalize_rows(g.matmul(raw, weight));
}

namespace {

// Gram-Schmidt orthonormalization of a seeded Gaussian square matrix; used as
// a well-conditioned per-modality rendering map.
Tensor random_rotation(std::size_t d, Rng rng) {
  Tensor m = rng.normal_tensor({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    double* ri = m.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      const double* rj = m.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += ri[k] * rj[k];
      for (std::size_t k = 0; k < d; ++k) ri[k] -= dot * rj[k];
    }
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += ri[k] * ri[k];
    double norm = std::sqrt(s);
    if (norm < 1e-10) {
      // vanishing direction; replace by a fresh draw and redo this row
      for (std::size_t k = 0; k < d; ++k) ri[k] = rng.normal();
      --i;
      continue;
    }
    for (std::size_t k = 0; k < d; ++k) ri[k] /= norm;
  }
  return m;
}

void apply_rotation(const Tensor& rot, const double* src, double* dst, std::size_t d) {
  for (std::size_t j = 0; j < d; ++j) dst[j] = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double v = src[k];
    if (v == 0.0) continue;
    const double* rr = rot.row(k);
    for (std::size_t j = 0; j < d; ++j) dst[j] += v * rr[j];
  }
}

}  // namespace

SyntheticDataset make_synthetic_dataset(std::size_t n_items, std::size_t d_raw, std::size_t d,
                                        std::size_t n_clusters, double noise, std::uint64_t seed,
                                        std::size_t m_p) {
  if (n_clusters == 0 || n_clusters > n_items) {
    throw std::invalid_argument("make_synthetic_dataset: need 1 <= n_clusters <= n_items");
  }
  if (noise < 0.0) throw std::invalid_argument("make_synthetic_dataset: noise must be >= 0");
  if (m_p < kStimuliPerItem) {
    throw std::invalid_argument("make_synthetic_dataset: m_p must be >= 3");
  }

  Rng root(seed);
  Rng anchor_rng = root.split(1);
  Rng offset_rng = root.split(2);
  Rng stim_rng = root.split(3);
  Rng noise_rng = root.split(4);
  const Tensor rot_v = random_rotation(d_raw, root.split(5));
  const Tensor rot_t = random_rotation(d_raw, root.split(6));

  SyntheticDataset ds;
  ds.n = n_items;
  ds.d_raw = d_raw;
  ds.d = d;
  ds.m_p = m_p;
  ds.n_clusters = n_clusters;
  ds.noise = noise;
  ds.seed = seed;

  Tensor anchors({n_clusters, d_raw});
  for (std::size_t c = 0; c < n_clusters; ++c) {
    double s = 0.0;
    double* row = anchors.row(c);
    for (std::size_t k = 0; k < d_raw; ++k) {
      row[k] = anchor_rng.normal();
      s += row[k] * row[k];
    }
    const double norm = std::sqrt(s);
    for (std::size_t k = 0; k < d_raw; ++k) row[k] /= norm;
  }

  constexpr double kOffsetScale = 0.3;
  constexpr double kStimBaseMix = 0.15;
  constexpr double kFullStimMix = 0.2;

  ds.image_global_raw = Tensor({n_items, d_raw});
  ds.image_patches_raw = Tensor({n_items, m_p, d_raw});
  ds.text_full_raw = Tensor({n_items, d_raw});
  ds.text_summary_raw = Tensor({n_items, d_raw});
  ds.text_stimuli_raw = Tensor({n_items, kStimuliPerItem, d_raw});
  ds.cluster_labels.resize(n_items);

  std::vector<double> base(d_raw), tmp(d_raw);
  std::vector<double> stim(kStimuliPerItem * d_raw);
  for (std::size_t i = 0; i < n_items; ++i) {
    const std::size_t c = i % n_clusters;
    ds.cluster_labels[i] = c;
    const double* anchor = anchors.row(c);
    for (std::size_t k = 0; k < d_raw; ++k) base[k] = anchor[k] + kOffsetScale * offset_rng.normal();

    for (std::size_t j = 0; j < kStimuliPerItem; ++j) {
      double s = 0.0;
      double* sj = stim.data() + j * d_raw;
      for (std::size_t k = 0; k < d_raw; ++k) {
        sj[k] = stim_rng.normal();
        s += sj[k] * sj[k];
      }
      const double norm = std::sqrt(s);
      for (std::size_t k = 0; k < d_raw; ++k) sj[k] /= norm;
    }

    auto render = [&](const Tensor& rot, const std::vector<double>& vec, double* dst) {
      apply_rotation(rot, vec.data(), dst, d_raw);
      if (noise > 0.0) {
        for (std::size_t k = 0; k < d_raw; ++k) dst[k] += noise * noise_rng.normal();
      }
    };

    render(rot_v, base, ds.image_global_raw.row(i));
    render(rot_t, base, ds.text_summary_raw.row(i));

    for (std::size_t k = 0; k < d_raw; ++k) {
      double mean_stim = 0.0;
      for (std::size_t j = 0; j < kStimuliPerItem; ++j) mean_stim += stim[j * d_raw + k];
      tmp[k] = base[k] + kFullStimMix * (mean_stim / kStimuliPerItem);
    }
    render(rot_t, tmp, ds.text_full_raw.row(i));

    for (std::size_t j = 0; j < kStimuliPerItem; ++j) {
      for (std::size_t k = 0; k < d_raw; ++k) tmp[k] = stim[j * d_raw + k] + kStimBaseMix * base[k];
      render(rot_t, tmp, ds.text_stimuli_raw.row(i * kStimuliPerItem + j));
    }

    for (std::size_t m = 0; m < m_p; ++m) {
      const std::size_t j = m % kStimuliPerItem;
      for (std::size_t k = 0; k < d_raw; ++k) tmp[k] = stim[j * d_raw + k] + kStimBaseMix * base[k];
      render(rot_v, tmp, ds.image_patches_raw.row(i * m_p + m));
    }
  }

  Tensor proto({n_clusters, d_raw});
  for (std::size_t c = 0; c < n_clusters; ++c) {
    apply_rotation(rot_t, anchors.row(c), proto.row(c), d_raw);
  }
  ds.cluster_text_raw = std::move(proto);
  return ds;
}

SyntheticDataset SyntheticDataset::subset(const std::vector<std::size_t>& items) const {
  SyntheticDataset out = *this;
  out.n = items.size();
  out.image_global_raw = Tensor({items.size(), d_raw});
  out.image_patches_raw = Tensor({items.size(), m_p, d_raw});
  out.text_full_raw = Tensor({items.size(), d_raw});
  out.text_summary_raw = Tensor({items.size(), d_raw});
  out.text_stimuli_raw = Tensor({items.size(), kStimuliPerItem, d_raw});
  out.cluster_labels.resize(items.size());
  for (std::size_t r = 0; r < items.size(); ++r) {
    const std::size_t i = items[r];
    if (i >= n) throw std::invalid_argument("subset: item index out of range");
    out.cluster_labels[r] = cluster_labels[i];
    auto copy_rows = [](const Tensor& src, Tensor& dst, std::size_t si, std::size_t di,
                        std::size_t rows) {
      for (std::size_t k = 0; k < rows; ++k) {
        const double* s = src.row(si + k);
        std::copy(s, s + src.row_len(), dst.row(di + k));
      }
    };
    copy_rows(image_global_raw, out.image_global_raw, i, r, 1);
    copy_rows(image_patches_raw, out.image_patches_raw, i * m_p, r * m_p, m_p);
    copy_rows(text_full_raw, out.text_full_raw, i, r, 1);
    copy_rows(text_summary_raw, out.text_summary_raw, i, r, 1);
    copy_rows(text_stimuli_raw, out.text_stimuli_raw, i * kStimuliPerItem, r * kStimuliPerItem,
              kStimuliPerItem);
  }
  return out;
}

void write_dataset_jsonl(const std::string& path, const SyntheticDataset& ds) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_dataset_jsonl: cannot open " + path);
  nlohmann::json header;
  header["kind"] = "synthetic_dataset";
  header["n"] = ds.n;
  header["d_raw"] = ds.d_raw;
  header["d"] = ds.d;
  header["m_p"] = ds.m_p;
  header["n_clusters"] = ds.n_clusters;
  header["noise"] = ds.noise;
  header["seed"] = ds.seed;
  header["cluster_text_raw"] = tensor_to_json(ds.cluster_text_raw);
  os << header.dump() << '\n';

  for (std::size_t i = 0; i < ds.n; ++i) {
    nlohmann::json item;
    item["id"] = i;
    item["cluster"] = ds.cluster_labels[i];
    auto rows_json = [&](const Tensor& t, std::size_t first_row, std::size_t rows) {
      nlohmann::json arr = nlohmann::json::array();
      for (std::size_t r = 0; r < rows; ++r) {
        nlohmann::json vec = nlohmann::json::array();
        const double* src = t.row(first_row + r);
        for (std::size_t k = 0; k < t.row_len(); ++k) vec.push_back(src[k]);
        arr.push_back(std::move(vec));
      }
      return arr;
    };
    item["image_global"] = rows_json(ds.image_global_raw, i, 1)[0];
    item["image_patches"] = rows_json(ds.image_patches_raw, i * ds.m_p, ds.m_p);
    item["text_full"] = rows_json(ds.text_full_raw, i, 1)[0];
    item["text_summary"] = rows_json(ds.text_summary_raw, i, 1)[0];
    item["text_stimuli"] = rows_json(ds.text_stimuli_raw, i * kStimuliPerItem, kStimuliPerItem);
    os << item.dump() << '\n';
  }
  if (!os) throw std::runtime_error("write_dataset_jsonl: write failed for " + path);
}

namespace {

void fill_rows(Tensor& dst, std::size_t first_row, const nlohmann::json& arr) {
  const Tensor t = tensor_from_json(arr);
  if (t.row_len() != dst.row_len() || t.row_count() + first_row > dst.row_count()) {
    throw std::runtime_error("dataset jsonl: row block has unexpected shape " + shape_str(t.shape()));
  }
  std::copy(t.data().begin(), t.data().end(), dst.data().begin() + first_row * dst.row_len());
}

}  // namespace

SyntheticDataset read_dataset_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_dataset_jsonl: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("read_dataset_jsonl: empty file " + path);
  const nlohmann::json header = nlohmann::json::parse(line);
  if (header.value("kind", "") != "synthetic_dataset") {
    throw std::runtime_error("read_dataset_jsonl: missing synthetic_dataset header in " + path);
  }
  SyntheticDataset ds;
  ds.n = header.at("n").get<std::size_t>();
  ds.d_raw = header.at("d_raw").get<std::size_t>();
  ds.d = header.at("d").get<std::size_t>();
  ds.m_p = header.at("m_p").get<std::size_t>();
  ds.n_clusters = header.at("n_clusters").get<std::size_t>();
  ds.noise = header.at("noise").get<double>();
  ds.seed = header.at("seed").get<std::uint64_t>();
  ds.cluster_text_raw = tensor_from_json(header.at("cluster_text_raw"));

  ds.image_global_raw = Tensor({ds.n, ds.d_raw});
  ds.image_patches_raw = Tensor({ds.n, ds.m_p, ds.d_raw});
  ds.text_full_raw = Tensor({ds.n, ds.d_raw});
  ds.text_summary_raw = Tensor({ds.n, ds.d_raw});
  ds.text_stimuli_raw = Tensor({ds.n, kStimuliPerItem, ds.d_raw});
  ds.cluster_labels.assign(ds.n, 0);

  std::size_t count = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json item = nlohmann::json::parse(line);
    const std::size_t i = item.at("id").get<std::size_t>();
    if (i >= ds.n) throw std::runtime_error("read_dataset_jsonl: item id out of range");
    ds.cluster_labels[i] = item.at("cluster").get<std::size_t>();
    fill_rows(ds.image_global_raw, i, item.at("image_global"));
    fill_rows(ds.image_patches_raw, i * ds.m_p, item.at("image_patches"));
    fill_rows(ds.text_full_raw, i, item.at("text_full"));
    fill_rows(ds.text_summary_raw, i, item.at("text_summary"));
    fill_rows(ds.text_stimuli_raw, i * kStimuliPerItem, item.at("text_stimuli"));
    ++count;
  }
  if (count != ds.n) {
    throw std::runtime_error("read_dataset_jsonl: expected " + std::to_string(ds.n) + " items, got " +
                             std::to_string(count));
  }
  return ds;
}

void write_batch_jsonl(const std::string& path, const EmbeddingBatch& batch) {
  batch.validate();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_batch_jsonl: cannot open " + path);
  for (std::size_t i = 0; i < batch.n; ++i) {
    nlohmann::json item;
    item["id"] = i;
    auto vec_json = [](const double* src, std::size_t len) {
      nlohmann::json arr = nlohmann::json::array();
      for (std::size_t k = 0; k < len; ++k) arr.push_back(src[k]);
      return arr;
    };
    item["image_global"] = vec_json(batch.image_global.row(i), batch.d);
    nlohmann::json patches = nlohmann::json::array();
    for (std::size_t m = 0; m < batch.m_p; ++m) {
      patches.push_back(vec_json(batch.image_patches.row(i * batch.m_p + m), batch.d));
    }
    item["image_patches"] = std::move(patches);
    item["text_full"] = vec_json(batch.text_full.row(i), batch.d);
    item["text_summary"] = vec_json(batch.text_summary.row(i), batch.d);
    nlohmann::json stim = nlohmann::json::array();
    for (std::size_t j = 0; j < kStimuliPerItem; ++j) {
      stim.push_back(vec_json(batch.text_stimuli.row(i * kStimuliPerItem + j), batch.d));
    }
    item["text_stimuli"] = std::move(stim);
    os << item.dump() << '\n';
  }
  if (!os) throw std::runtime_error("write_batch_jsonl: write failed for " + path);
}

EmbeddingBatch read_batch_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_batch_jsonl: cannot open " + path);
  std::vector<nlohmann::json> items;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) items.push_back(nlohmann::json::parse(line));
  }
  if (items.empty()) throw std::runtime_error("read_batch_jsonl: no items in " + path);

  EmbeddingBatch batch;
  batch.n = items.size();
  batch.d = items[0].at("image_global").size();
  batch.m_p = items[0].at("image_patches").size();
  batch.image_global = Tensor({batch.n, batch.d});
  batch.image_patches = Tensor({batch.n, batch.m_p, batch.d});
  batch.text_full = Tensor({batch.n, batch.d});
  batch.text_summary = Tensor({batch.n, batch.d});
  batch.text_stimuli = Tensor({batch.n, kStimuliPerItem, batch.d});
  for (std::size_t idx = 0; idx < items.size(); ++idx) {
    const nlohmann::json& item = items[idx];
    const std::size_t i = item.contains("id") ? item.at("id").get<std::size_t>() : idx;
    if (i >= batch.n) throw std::runtime_error("read_batch_jsonl: item id out of range");
    fill_rows(batch.image_global, i, item.at("image_global"));
    fill_rows(batch.image_patches, i * batch.m_p, item.at("image_patches"));
    fill_rows(batch.text_full, i, item.at("text_full"));
    fill_rows(batch.text_summary, i, item.at("text_summary"));
    fill_rows(batch.text_stimuli, i * kStimuliPerItem, item.at("text_stimuli"));
  }
  batch.validate();
  return batch;
}

}  // namespace emokit
