#include "emokit/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace emokit {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
  for (std::size_t d : shape_) {
    if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("from_rows: empty row list");
  const std::size_t c = rows[0].size();
  Tensor t({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != c) throw std::invalid_argument("from_rows: ragged rows");
    std::memcpy(t.row(i), rows[i].data(), c * sizeof(double));
  }
  return t;
}

double Tensor::scalar_value() const {
  if (!shape_.empty()) {
    throw std::invalid_argument("scalar_value: tensor has shape " + shape_str(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                  shape_str(b) + " are not broadcastable");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

template <typename T>
void write_le(std::ofstream& os, T v) {
  // Writes the in-memory representation; build targets are little-endian.
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_mdt(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_mdt: cannot open " + path);
  os.write("MDT1", 4);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!os) throw std::runtime_error("write_mdt: write failed for " + path);
}

Tensor read_mdt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_mdt: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MDT1", 4) != 0) {
    throw std::runtime_error("read_mdt: bad magic in " + path);
  }
  const std::uint32_t rank = read_le<std::uint32_t>(is);
  if (rank > 8) throw std::runtime_error("read_mdt: implausible rank in " + path);
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<std::size_t>(read_le<std::uint64_t>(is));
  std::vector<double> data(shape_numel(shape));
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!is) throw std::runtime_error("read_mdt: truncated payload in " + path);
  return Tensor(std::move(shape), std::move(data));
}

namespace {

nlohmann::json slice_to_json(const Tensor& t, std::size_t axis, std::size_t offset) {
  if (axis == t.rank()) return t[offset];
  std::size_t stride = 1;
  for (std::size_t i = axis + 1; i < t.rank(); ++i) stride *= t.dim(i);
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < t.dim(axis); ++i) arr.push_back(slice_to_json(t, axis + 1, offset + i * stride));
  return arr;
}

void json_shape(const nlohmann::json& j, Shape& shape) {
  if (j.is_array()) {
    if (j.empty()) throw std::invalid_argument("tensor_from_json: empty array");
    shape.push_back(j.size());
    json_shape(j[0], shape);
  } else if (!j.is_number()) {
    throw std::invalid_argument("tensor_from_json: non-numeric element");
  }
}

void json_fill(const nlohmann::json& j, std::size_t depth, const Shape& shape, std::vector<double>& out) {
  if (depth == shape.size()) {
    if (!j.is_number()) throw std::invalid_argument("tensor_from_json: ragged or non-numeric array");
    out.push_back(j.get<double>());
    return;
  }
  if (!j.is_array() || j.size() != shape[depth]) {
    throw std::invalid_argument("tensor_from_json: ragged array");
  }
  for (const auto& e : j) json_fill(e, depth + 1, shape, out);
}

}  // namespace

nlohmann::json tensor_to_json(const Tensor& t) { return slice_to_json(t, 0, 0); }

Tensor tensor_from_json(const nlohmann::json& j) {
  Shape shape;
  json_shape(j, shape);
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  json_fill(j, 0, shape, data);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace emokit
