#include "lumbarseg/autodiff/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace lumbarseg::ad {
namespace {

constexpr char kMagic[4] = {'L', 'S', 'C', 'K'};

template <typename Scalar>
constexpr std::uint8_t element_code() {
  return sizeof(Scalar) == 4 ? 1 : 2;
}

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes_.insert(bytes_.end(), raw, raw + sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  template <typename Scalar>
  void put_values(const Array<Scalar>& values) {
    for (Index i = 0; i < values.size(); ++i) put(values[i]);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <typename Scalar>
  Array<Scalar> get_values(Index count) {
    need(static_cast<std::size_t>(count) * sizeof(Scalar));
    Array<Scalar> out(count);
    for (Index i = 0; i < count; ++i) out[i] = get<Scalar>();
    return out;
  }
  std::size_t position() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError("checkpoint truncated at byte offset " + std::to_string(pos_) +
                            ": need " + std::to_string(n) + " more bytes, have " +
                            std::to_string(bytes_.size() - pos_));
    }
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename Scalar>
Checkpoint<Scalar> Checkpoint<Scalar>::capture(const ParameterSet<Scalar>& params,
                                               const AdamState<Scalar>& adam,
                                               std::map<std::string, std::string> metadata) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  for (const auto& e : params.entries()) {
    ck.tensors.push_back({e.name, e.tensor.shape(), e.trainable, e.tensor.value()});
  }
  ck.adam = adam;
  return ck;
}

template <typename Scalar>
void Checkpoint<Scalar>::restore_into(ParameterSet<Scalar>& params,
                                      const std::vector<std::string>& skip) const {
  for (const auto& e : params.entries()) {
    if (std::find(skip.begin(), skip.end(), e.name) != skip.end()) continue;
    if (!contains(e.name)) throw CheckpointError("checkpoint lacks tensor '" + e.name + "'");
    const auto& src = entry(e.name);
    if (src.shape != e.tensor.shape()) {
      throw CheckpointError("tensor '" + e.name + "' has shape " + to_string(src.shape) +
                            " in checkpoint, network expects " + to_string(e.tensor.shape()));
    }
    auto t = e.tensor;
    t.value() = src.values;
  }
}

template <typename Scalar>
bool Checkpoint<Scalar>::contains(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const Entry& e) { return e.name == name; });
}

template <typename Scalar>
const typename Checkpoint<Scalar>::Entry& Checkpoint<Scalar>::entry(const std::string& name) const {
  for (const auto& e : tensors) {
    if (e.name == name) return e;
  }
  throw CheckpointError("checkpoint lacks tensor '" + name + "'");
}

template <typename Scalar>
std::uint64_t Checkpoint<Scalar>::hash_of(const std::string& name) const {
  const auto& e = entry(name);
  return tensor_hash(e.shape, e.values);
}

template <typename Scalar>
std::vector<std::uint8_t> Checkpoint<Scalar>::to_bytes() const {
  ByteWriter w;
  for (char c : kMagic) w.put(c);
  w.put(format_version);
  w.put(element_code<Scalar>());
  w.put(static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put(static_cast<std::uint32_t>(tensors.size()));
  std::size_t trainable_count = 0;
  for (const auto& e : tensors) {
    w.put_string(e.name);
    w.put(static_cast<std::uint8_t>(e.trainable ? 1 : 0));
    w.put(static_cast<std::uint32_t>(e.shape.size()));
    for (Index d : e.shape) w.put(static_cast<std::uint64_t>(d));
    w.put_values(e.values);
    if (e.trainable) ++trainable_count;
  }
  w.put(adam.step_count);
  w.put(adam.learning_rate);
  w.put(adam.beta1);
  w.put(adam.beta2);
  w.put(adam.epsilon);
  const bool has_moments = !adam.first_moment.empty();
  w.put(static_cast<std::uint32_t>(has_moments ? trainable_count : 0));
  if (has_moments) {
    if (adam.first_moment.size() != trainable_count) {
      throw CheckpointError("optimizer moments do not match the trainable tensors");
    }
    for (std::size_t i = 0; i < trainable_count; ++i) {
      w.put_values(adam.first_moment[i]);
      w.put_values(adam.second_moment[i]);
    }
  }
  return w.take();
}

template <typename Scalar>
Checkpoint<Scalar> Checkpoint<Scalar>::from_bytes(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  for (char c : kMagic) {
    if (r.get<char>() != c) throw CheckpointError("not a checkpoint (bad magic)");
  }
  Checkpoint ck;
  ck.format_version = r.get<std::uint32_t>();
  if (ck.format_version != kCheckpointFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version " +
                          std::to_string(ck.format_version));
  }
  const auto code = r.get<std::uint8_t>();
  if (code != element_code<Scalar>()) {
    throw CheckpointError("checkpoint element type code " + std::to_string(code) +
                          " does not match the requested scalar type");
  }
  const auto meta_count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    auto k = r.get_string();
    ck.metadata[k] = r.get_string();
  }
  const auto tensor_count = r.get<std::uint32_t>();
  std::vector<Index> trainable_sizes;
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    Entry e;
    e.name = r.get_string();
    e.trainable = r.get<std::uint8_t>() != 0;
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) {
      throw CheckpointError("tensor '" + e.name + "' has implausible rank " +
                            std::to_string(rank) + " at byte offset " +
                            std::to_string(r.position()));
    }
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.shape.push_back(static_cast<Index>(r.get<std::uint64_t>()));
    }
    e.values = r.template get_values<Scalar>(element_count(e.shape));
    if (e.trainable) trainable_sizes.push_back(e.values.size());
    ck.tensors.push_back(std::move(e));
  }
  ck.adam.step_count = r.get<std::uint64_t>();
  ck.adam.learning_rate = r.get<double>();
  ck.adam.beta1 = r.get<double>();
  ck.adam.beta2 = r.get<double>();
  ck.adam.epsilon = r.get<double>();
  const auto moment_count = r.get<std::uint32_t>();
  if (moment_count != 0 && moment_count != trainable_sizes.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(moment_count) +
                          " moment pairs for " + std::to_string(trainable_sizes.size()) +
                          " trainable tensors");
  }
  for (std::uint32_t i = 0; i < moment_count; ++i) {
    ck.adam.first_moment.push_back(r.template get_values<Scalar>(trainable_sizes[i]));
    ck.adam.second_moment.push_back(r.template get_values<Scalar>(trainable_sizes[i]));
  }
  if (!r.at_end()) {
    throw CheckpointError("trailing bytes after checkpoint at byte offset " +
                          std::to_string(r.position()));
  }
  return ck;
}

template <typename Scalar>
void Checkpoint<Scalar>::save(const std::filesystem::path& path) const {
  const auto bytes = to_bytes();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename Scalar>
Checkpoint<Scalar> Checkpoint<Scalar>::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return from_bytes(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

template struct Checkpoint<float>;
template struct Checkpoint<double>;

}  // namespace lumbarseg::ad
