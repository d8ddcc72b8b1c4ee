#pragma once

// Encoder + heads as one trainable unit, its checkpoint container, and the
// batch text-embedding entry point used by evaluation.
//
// Checkpoint layout (version 1, all integers little-endian):
//   bytes 0..7   magic "CADTXCK1"
//   u32          format version (1)
//   u64          header length H
//   H bytes      UTF-8 JSON header:
//                  {"dtype": "f32", "encoder": {...}, "head": {...},
//                   "vocab": [regular tokens in id order], "metadata": {...},
//                   "tensors": [{"name", "rows", "cols", "offset"}, ...]}
//                offset counts float elements from the start of the data block
//   data block   IEEE-754 binary32 values, row-major, in "tensors" order

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cadtext/encoder.hpp"
#include "cadtext/objectives.hpp"
#include "cadtext/tokenizer.hpp"
#include "json.hpp"

namespace cadtext {

template <typename T>
struct Model {
  EncoderConfig encoder;
  HeadConfig head;
  Parameters<T> params;
  Heads<T> heads;
};

template <typename T>
Model<T> init_model(const EncoderConfig& encoder, const HeadConfig& head);
template <typename T>
Model<T> zeros_like(const Model<T>& m);
template <typename T, typename U>
Model<U> cast_model(const Model<T>& m);

// Encoder tensors are prefixed "encoder.", heads "head.". `trainable` is false
// for config-frozen encoder tensors and for head.log_tau unless learnable.
template <typename T>
void for_each_tensor(Model<T>& m, const std::function<void(const std::string&, Matrix<T>&, bool trainable)>& fn);
template <typename T>
void for_each_tensor(const Model<T>& m,
                     const std::function<void(const std::string&, const Matrix<T>&, bool trainable)>& fn);

struct Checkpoint {
  Model<float> model;
  Vocab vocab;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const Vocab& vocab,
                     const nlohmann::json& metadata = nlohmann::json::object());
// Throws DataError for a missing, truncated or inconsistent file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Unit-norm embedding per text: encode_single -> eval forward -> projection
// (if the head uses one) -> L2 normalize. Rows are computed independently in
// parallel. Result is texts.size() x embedding width.
Matrix<double> embed_texts(const Model<float>& model, const Vocab& vocab,
                           const std::vector<std::string>& texts, std::size_t max_len);

}  // namespace cadtext
