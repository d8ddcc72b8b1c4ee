#include "cadtext/model.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "cadtext/errors.hpp"

namespace cadtext {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'A', 'D', 'T', 'X', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename M, typename Fn>
void visit_heads(M& m, Fn& fn) {
  fn("head.pair_w", m.heads.pair_w, true);
  fn("head.pair_b", m.heads.pair_b, true);
  fn("head.proj_w", m.heads.proj_w, m.head.use_projection);
  fn("head.proj_b", m.heads.proj_b, m.head.use_projection);
  fn("head.log_tau", m.heads.log_tau, m.head.learnable_tau);
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("checkpoint is truncated");
  return v;
}

}  // namespace

template <typename T>
Model<T> init_model(const EncoderConfig& encoder, const HeadConfig& head) {
  Model<T> m;
  m.encoder = encoder;
  m.head = head;
  m.params = init_parameters<T>(encoder);
  m.heads = init_heads<T>(encoder.d_model, head, encoder.seed);
  return m;
}

template <typename T>
Model<T> zeros_like(const Model<T>& m) {
  Model<T> z;
  z.encoder = m.encoder;
  z.head = m.head;
  z.params = zeros_like(m.params);
  z.heads = zeros_like(m.heads);
  return z;
}

template <typename T, typename U>
Model<U> cast_model(const Model<T>& m) {
  Model<U> out;
  out.encoder = m.encoder;
  out.head = m.head;
  out.params = cast_parameters<T, U>(m.params);
  auto cast = [](const Matrix<T>& x) {
    Matrix<U> y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = static_cast<U>(x.data()[i]);
    return y;
  };
  out.heads = {cast(m.heads.pair_w), cast(m.heads.pair_b), cast(m.heads.proj_w),
               cast(m.heads.proj_b), cast(m.heads.log_tau)};
  return out;
}

template <typename T>
void for_each_tensor(Model<T>& m, const std::function<void(const std::string&, Matrix<T>&, bool)>& fn) {
  for_each_tensor<T>(m.params, m.encoder, [&](const std::string& name, Matrix<T>& x, bool frozen) {
    fn("encoder." + name, x, !frozen);
  });
  visit_heads(m, fn);
}

template <typename T>
void for_each_tensor(const Model<T>& m,
                     const std::function<void(const std::string&, const Matrix<T>&, bool)>& fn) {
  for_each_tensor<T>(m.params, m.encoder, [&](const std::string& name, const Matrix<T>& x, bool frozen) {
    fn("encoder." + name, x, !frozen);
  });
  visit_heads(m, fn);
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const Vocab& vocab,
                     const nlohmann::json& metadata) {
  if (vocab.size() != model.encoder.vocab_size)
    throw std::invalid_argument("save_checkpoint: vocabulary size does not match the encoder");
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const Matrix<float>*> order;
  std::size_t offset = 0;
  for_each_tensor<float>(model, [&](const std::string& name, const Matrix<float>& m, bool) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += m.size();
    order.push_back(&m);
  });
  const nlohmann::json header = {{"dtype", "f32"},
                                 {"encoder", model.encoder.to_json()},
                                 {"head", model.head.to_json()},
                                 {"vocab", vocab.regular_tokens()},
                                 {"metadata", metadata},
                                 {"tensors", tensors}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write checkpoint: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* m : order)
    out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(float)));
  if (!out) throw RuntimeFailure("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not a checkpoint file: " + path.string());
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = read_pod<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("checkpoint header is truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (header.value("dtype", "") != "f32") throw DataError("checkpoint dtype must be f32");

  Checkpoint ck;
  ck.vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
  const auto enc = EncoderConfig::from_json(header.at("encoder"));
  if (enc.vocab_size != ck.vocab.size())
    throw DataError("checkpoint vocabulary (" + std::to_string(ck.vocab.size()) +
                    " tokens) does not match encoder vocab_size " + std::to_string(enc.vocab_size));
  ck.model = init_model<float>(enc, HeadConfig::from_json(header.at("head")));
  ck.metadata = header.value("metadata", nlohmann::json::object());

  const auto& entries = header.at("tensors");
  std::size_t idx = 0;
  for_each_tensor<float>(ck.model, [&](const std::string& name, Matrix<float>& m, bool) {
    if (idx >= entries.size()) throw DataError("checkpoint is missing tensor " + name);
    const auto& e = entries[idx++];
    if (e.at("name").get<std::string>() != name || e.at("rows").get<std::size_t>() != m.rows() ||
        e.at("cols").get<std::size_t>() != m.cols())
      throw DataError("checkpoint tensor " + e.at("name").get<std::string>() +
                      " does not match the expected " + name + " shape " +
                      std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!in) throw DataError("checkpoint data is truncated at " + name);
  });
  if (idx != entries.size()) throw DataError("checkpoint has unexpected extra tensors");
  return ck;
}

Matrix<double> embed_texts(const Model<float>& model, const Vocab& vocab,
                           const std::vector<std::string>& texts, std::size_t max_len) {
  const std::size_t width = model.head.use_projection ? model.head.d_embed : model.encoder.d_model;
  Matrix<double> out(texts.size(), width);
  const long long n = static_cast<long long>(texts.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (long long i = 0; i < n; ++i) {
    const auto seq = encode_single(texts[static_cast<std::size_t>(i)], vocab, max_len);
    const auto enc = forward<float>(seq, model.params, model.encoder, Mode::Eval, nullptr);
    const auto v = contrastive_embed<float>(enc.cls_state, model.heads, model.head);
    // Re-normalize in double so rows are unit length to double precision.
    double sq = 0;
    for (float x : v) sq += static_cast<double>(x) * x;
    const double norm = std::sqrt(sq) + kNormEpsilon;
    auto row = out.row(static_cast<std::size_t>(i));
    for (std::size_t j = 0; j < width; ++j) row[j] = static_cast<double>(v[j]) / norm;
  }
  return out;
}

#define CADTEXT_INSTANTIATE(T)                                                                  \
  template Model<T> init_model<T>(const EncoderConfig&, const HeadConfig&);                     \
  template Model<T> zeros_like<T>(const Model<T>&);                                             \
  template void for_each_tensor<T>(Model<T>&,                                                   \
                                   const std::function<void(const std::string&, Matrix<T>&, bool)>&); \
  template void for_each_tensor<T>(                                                             \
      const Model<T>&, const std::function<void(const std::string&, const Matrix<T>&, bool)>&);

CADTEXT_INSTANTIATE(float)
CADTEXT_INSTANTIATE(double)
template Model<double> cast_model<float, double>(const Model<float>&);
template Model<float> cast_model<double, float>(const Model<double>&);

#undef CADTEXT_INSTANTIATE

}  // namespace cadtext
