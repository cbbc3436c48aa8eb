#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pushlab/checkpoint.hpp"
#include "pushlab/nets.hpp"
#include "pushlab/physics.hpp"
#include "pushlab/util.hpp"

namespace pushlab::vision {

struct RenderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kMaskSize = 64;
constexpr int kPooledSize = 32;
constexpr int kLatentDim = 6;

// maximum footprint dimension in the randomization ranges, used to normalize
// the oracle descriptor
constexpr double kMaxFootprint = 0.11;

struct Camera {
  Vec2 origin;             // table-frame position of pixel (0, 0)
  double meters_per_pixel = 0.00625;

  static Camera covering(const physics::TableBounds& table) {
    Camera cam;
    cam.origin = table.lo;
    cam.meters_per_pixel = std::max(table.size().x, table.size().y) / kMaskSize;
    return cam;
  }

  Vec2 pixel_center(int row, int col) const {
    return {origin.x + (col + 0.5) * meters_per_pixel,
            origin.y + (row + 0.5) * meters_per_pixel};
  }
};

struct Mask {
  std::vector<std::uint8_t> grid;  // kMaskSize^2, row-major, values in {0, 1}
  double meters_per_pixel = 0.0;
  Vec2 origin;

  Mask() : grid(kMaskSize * kMaskSize, 0) {}

  std::uint8_t at(int row, int col) const { return grid[row * kMaskSize + col]; }
  int pixel_count() const {
    int n = 0;
    for (const auto v : grid) n += v;
    return n;
  }
};

struct Pose {
  Vec2 pos;
  double theta = 0.0;
};

inline bool point_in_shape(const physics::ShapeSpec& shape, const Pose& pose, const Vec2& p) {
  if (shape.kind == physics::ShapeKind::kDisc) {
    return (p - pose.pos).norm_sq() <= shape.radius * shape.radius;
  }
  const Vec2 q = rotate(p - pose.pos, -pose.theta);
  return std::abs(q.x) <= shape.half_extents.x && std::abs(q.y) <= shape.half_extents.y;
}

// Top-down binary footprint, one sample per pixel center, no antialiasing.
inline Mask render_mask(const physics::ShapeSpec& shape, const Pose& pose, const Camera& cam) {
  Mask mask;
  mask.meters_per_pixel = cam.meters_per_pixel;
  mask.origin = cam.origin;
  int count = 0;
  for (int r = 0; r < kMaskSize; ++r) {
    for (int c = 0; c < kMaskSize; ++c) {
      if (point_in_shape(shape, pose, cam.pixel_center(r, c))) {
        mask.grid[r * kMaskSize + c] = 1;
        ++count;
      }
    }
  }
  if (count == 0)
    throw RenderError("render_mask: shape footprint entirely outside the camera view");
  return mask;
}

// 2x2 average pooling to a [1, 1024] row, the autoencoder's working resolution
inline nets::Tensor pool_mask(const Mask& mask) {
  nets::Tensor out(1, kPooledSize * kPooledSize);
  for (int r = 0; r < kPooledSize; ++r) {
    for (int c = 0; c < kPooledSize; ++c) {
      const int rr = 2 * r, cc = 2 * c;
      const float sum = static_cast<float>(mask.at(rr, cc) + mask.at(rr, cc + 1) +
                                           mask.at(rr + 1, cc) + mask.at(rr + 1, cc + 1));
      out.at(0, r * kPooledSize + c) = sum / 4.0f;
    }
  }
  return out;
}

using LatentCode = std::array<float, kLatentDim>;

// ---------------------------------------------------------------------------
// autoencoder
//
// The encoder maps the pooled mask to the 6-D code. Two decoder families are
// supported: a dense mirror of the encoder, and a coordinate-conditioned MLP
// that scores each pooled pixel from [code, pixel center] — the latter paints
// sharp footprints at a fraction of the parameters.

enum class DecoderKind { kDense, kCoordinate };

// Coordinate monomials [u, v, u^2, v^2, uv] of the normalized pooled pixel
// centers. A footprint indicator is a quadratic form in the pixel coordinates
// with code-dependent coefficients, so the decoder additionally receives the
// products of the code with these monomials and only has to combine them.
constexpr int kCoordMonomials = 5;
constexpr int kCoordFeatureDim =
    kLatentDim + kCoordMonomials + kLatentDim * kCoordMonomials;

inline const nets::Tensor& pooled_pixel_monomials() {
  static const nets::Tensor grid = [] {
    nets::Tensor g(kPooledSize * kPooledSize, kCoordMonomials);
    for (int r = 0; r < kPooledSize; ++r) {
      for (int c = 0; c < kPooledSize; ++c) {
        const float u = (c + 0.5f) / (kPooledSize / 2.0f) - 1.0f;
        const float v = (r + 0.5f) / (kPooledSize / 2.0f) - 1.0f;
        const int p = r * kPooledSize + c;
        g.at(p, 0) = u;
        g.at(p, 1) = v;
        g.at(p, 2) = u * u;
        g.at(p, 3) = v * v;
        g.at(p, 4) = u * v;
      }
    }
    return g;
  }();
  return grid;
}

struct EncoderModel {
  nets::Mlp encoder;  // 1024-256-64-6
  nets::Mlp decoder;  // dense: 6-...-1024; coordinate: 8-...-1 shared per pixel
  DecoderKind decoder_kind = DecoderKind::kCoordinate;
  int epochs_trained = 0;
  float final_loss = 0.0f;
  std::vector<float> epoch_losses;

  static EncoderModel init(Rng& rng, DecoderKind kind = DecoderKind::kCoordinate,
                           std::vector<int> encoder_sizes = {},
                           std::vector<int> decoder_sizes = {}) {
    EncoderModel m;
    m.decoder_kind = kind;
    if (encoder_sizes.empty())
      encoder_sizes = {kPooledSize * kPooledSize, 256, 64, kLatentDim};
    if (decoder_sizes.empty()) {
      if (kind == DecoderKind::kDense)
        decoder_sizes = {kLatentDim, 64, 256, kPooledSize * kPooledSize};
      else
        decoder_sizes = {kCoordFeatureDim, 32, 32, 1};
    }
    m.encoder = nets::Mlp(encoder_sizes, rng);
    m.decoder = nets::Mlp(decoder_sizes, rng);
    return m;
  }

  std::vector<nets::ParamRef<float>> params() {
    std::vector<nets::ParamRef<float>> out;
    encoder.collect_params("enc", out);
    decoder.collect_params("dec", out);
    return out;
  }
};

inline LatentCode encode(const EncoderModel& model, const Mask& mask) {
  const nets::Tensor z = nets::mlp_forward(model.encoder, pool_mask(mask));
  LatentCode code{};
  for (int i = 0; i < kLatentDim; ++i) code[i] = z.at(0, i);
  return code;
}

// per-pixel decoder input rows [code, monomials, code x monomials]
inline nets::Tensor coordinate_rows(const nets::Tensor& codes) {
  const nets::Tensor& grid = pooled_pixel_monomials();
  const int pixels = grid.rows;
  nets::Tensor rows(codes.rows * pixels, kCoordFeatureDim);
  for (int b = 0; b < codes.rows; ++b) {
    for (int p = 0; p < pixels; ++p) {
      const int r = b * pixels + p;
      int col = 0;
      for (int i = 0; i < kLatentDim; ++i) rows.at(r, col++) = codes.at(b, i);
      for (int m = 0; m < kCoordMonomials; ++m) rows.at(r, col++) = grid.at(p, m);
      for (int m = 0; m < kCoordMonomials; ++m)
        for (int i = 0; i < kLatentDim; ++i)
          rows.at(r, col++) = codes.at(b, i) * grid.at(p, m);
    }
  }
  return rows;
}

// reconstruction probabilities at pooled resolution
inline nets::Tensor decode(const EncoderModel& model, const LatentCode& code) {
  nets::Tensor z(1, kLatentDim);
  for (int i = 0; i < kLatentDim; ++i) z.at(0, i) = code[i];
  nets::Tensor logits;
  if (model.decoder_kind == DecoderKind::kDense) {
    logits = nets::mlp_forward(model.decoder, z);
  } else {
    const nets::Tensor per_pixel = nets::mlp_forward(model.decoder, coordinate_rows(z));
    logits = nets::Tensor(1, kPooledSize * kPooledSize);
    for (int p = 0; p < logits.cols; ++p) logits.at(0, p) = per_pixel.at(p, 0);
  }
  for (auto& x : logits.v) x = 1.0f / (1.0f + std::exp(-x));
  return logits;
}

// majority-binarized pooled footprint, the reconstruction target
inline nets::Tensor binarize_pooled(const nets::Tensor& pooled) {
  nets::Tensor out = pooled;
  for (auto& v : out.v) v = v >= 0.5f ? 1.0f : 0.0f;
  return out;
}

// intersection over union of the 0.5-thresholded reconstruction and target
inline double mask_iou(const nets::Tensor& probs, const nets::Tensor& target) {
  int inter = 0, uni = 0;
  for (int i = 0; i < target.size(); ++i) {
    const bool a = probs.v[i] >= 0.5f;
    const bool b = target.v[i] >= 0.5f;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

inline double reconstruction_iou(const EncoderModel& model, const Mask& mask) {
  const nets::Tensor target = binarize_pooled(pool_mask(mask));
  return mask_iou(decode(model, encode(model, mask)), target);
}

struct TrainEncoderOptions {
  int epochs = 60;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double lr_final_fraction = 1.0;  // geometric decay to lr * fraction by the last epoch
  DecoderKind decoder_kind = DecoderKind::kCoordinate;
  std::vector<int> encoder_sizes;  // empty = default architecture
  std::vector<int> decoder_sizes;
  // called after each epoch with (epoch, mean loss); may be empty
  std::function<void(int, float)> on_epoch;
};

inline EncoderModel train_autoencoder(const std::vector<Mask>& dataset, int epochs,
                                      std::uint64_t seed,
                                      const TrainEncoderOptions& opts_in = {}) {
  if (dataset.empty()) throw std::invalid_argument("train_autoencoder: empty dataset");
  TrainEncoderOptions opts = opts_in;
  opts.epochs = epochs;

  Rng rng(seed);
  EncoderModel model =
      EncoderModel::init(rng, opts.decoder_kind, opts.encoder_sizes, opts.decoder_sizes);

  std::vector<nets::Tensor> pooled;
  pooled.reserve(dataset.size());
  for (const auto& m : dataset) pooled.push_back(pool_mask(m));

  constexpr int kPixels = kPooledSize * kPooledSize;

  auto batch_loss = [&](const std::vector<int>& idx, bool train,
                        nets::AdamT<float>& adam) -> float {
    nets::Tape tape;
    nets::TapeBinding<float> binding(tape);
    const nets::MlpNodes<float> enc = nets::bind_mlp(binding, model.encoder);
    const nets::MlpNodes<float> dec = nets::bind_mlp(binding, model.decoder);
    const int b = static_cast<int>(idx.size());
    nets::Tensor x(b, kPixels);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < kPixels; ++j) x.at(i, j) = pooled[idx[i]].at(0, j);
    const int codes =
        nets::mlp_on_tape(tape, model.encoder, enc, tape.leaf(x));
    int loss;
    if (model.decoder_kind == DecoderKind::kDense) {
      const int logits = nets::mlp_on_tape(tape, model.decoder, dec, codes);
      loss = tape.bce_logits(logits, binarize_pooled(x));
    } else {
      // each pooled pixel is scored from [code, monomials, code x monomials]
      const nets::Tensor& grid = pooled_pixel_monomials();
      nets::Tensor mono(b * kPixels, kCoordMonomials);
      nets::Tensor target(b * kPixels, 1);
      for (int i = 0; i < b; ++i) {
        for (int p = 0; p < kPixels; ++p) {
          for (int m = 0; m < kCoordMonomials; ++m)
            mono.at(i * kPixels + p, m) = grid.at(p, m);
          target.at(i * kPixels + p, 0) = x.at(i, p) >= 0.5f ? 1.0f : 0.0f;
        }
      }
      const int rep = tape.repeat_rows(codes, kPixels);
      int rows = tape.concat_cols(rep, tape.leaf(mono));
      for (int m = 0; m < kCoordMonomials; ++m) {
        nets::Tensor tiled(b * kPixels, kLatentDim);
        for (int r = 0; r < tiled.rows; ++r)
          for (int i = 0; i < kLatentDim; ++i) tiled.at(r, i) = mono.at(r, m);
        rows = tape.concat_cols(rows, tape.mul(rep, tape.leaf(tiled)));
      }
      const int logits = nets::mlp_on_tape(tape, model.decoder, dec, rows);
      loss = tape.bce_logits(logits, target);
    }
    const float value = tape.val(loss).at(0, 0);
    if (train) {
      tape.backward(loss);
      adam.step(binding.params, binding.grads());
    }
    return value;
  };

  nets::AdamT<float> adam;
  adam.lr = opts.learning_rate;

  std::vector<int> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  float mean_loss = 0.0f;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    if (opts.lr_final_fraction != 1.0 && opts.epochs > 1) {
      adam.lr = opts.learning_rate *
                std::pow(opts.lr_final_fraction,
                         static_cast<double>(epoch) / (opts.epochs - 1));
    }
    // Fisher-Yates shuffle driven by the project rng
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_int(0, i));
      std::swap(order[i], order[j]);
    }
    double acc = 0.0;
    int seen = 0;
    for (size_t start = 0; start < order.size(); start += opts.batch_size) {
      const size_t end = std::min(order.size(), start + opts.batch_size);
      const std::vector<int> idx(order.begin() + start, order.begin() + end);
      const float loss = batch_loss(idx, true, adam);
      if (!std::isfinite(loss))
        throw NumericalError("train_autoencoder: loss diverged at epoch " +
                             std::to_string(epoch));
      acc += static_cast<double>(loss) * idx.size();
      seen += static_cast<int>(idx.size());
    }
    mean_loss = static_cast<float>(acc / seen);
    model.epoch_losses.push_back(mean_loss);
    if (opts.on_epoch) opts.on_epoch(epoch, mean_loss);
  }

  if (opts.epochs == 0) {
    // report the loss of the untouched initialization
    nets::AdamT<float> unused;
    std::vector<int> idx;
    for (size_t i = 0; i < std::min<size_t>(dataset.size(), 256); ++i)
      idx.push_back(static_cast<int>(i));
    mean_loss = batch_loss(idx, false, unused);
  }
  model.epochs_trained = opts.epochs;
  model.final_loss = mean_loss;
  return model;
}

inline void save_encoder(const EncoderModel& model_in, const std::string& path) {
  EncoderModel& model = const_cast<EncoderModel&>(model_in);
  Checkpoint ck;
  ck.magic = Checkpoint::kEncoderMagic;
  for (const auto& p : model.params()) ck.add(p.name, *p.tensor);
  ck.add_scalar("meta/decoder_kind", static_cast<float>(model.decoder_kind));
  ck.add_scalar("meta/epochs", static_cast<float>(model.epochs_trained));
  ck.add_scalar("meta/final_loss", model.final_loss);
  ck.save(path);
}

inline EncoderModel load_encoder(const std::string& path) {
  const Checkpoint ck = Checkpoint::load(path, Checkpoint::kEncoderMagic);
  auto sizes_of = [&](const std::string& prefix) {
    std::vector<int> sizes;
    for (int l = 0;; ++l) {
      const Checkpoint::Entry* e = ck.find(prefix + "/w" + std::to_string(l));
      if (e == nullptr) break;
      if (l == 0) sizes.push_back(static_cast<int>(e->dims[0]));
      sizes.push_back(static_cast<int>(e->dims[1]));
    }
    if (sizes.size() < 2) throw ConfigError("load_encoder: no layers under " + prefix);
    return sizes;
  };
  Rng rng(0);
  const auto kind = static_cast<DecoderKind>(ck.scalar("meta/decoder_kind"));
  EncoderModel model = EncoderModel::init(rng, kind, sizes_of("enc"), sizes_of("dec"));
  for (const auto& p : model.params()) *p.tensor = ck.tensor(p.name);
  model.epochs_trained = static_cast<int>(ck.scalar("meta/epochs"));
  model.final_loss = ck.scalar("meta/final_loss");
  return model;
}

// ---------------------------------------------------------------------------
// oracle descriptor
//
// Training-free 6-D stand-in for the encoder: normalized centroid, doubled
// orientation weighted by footprint eccentricity, normalized footprint sizes.

inline LatentCode oracle_descriptor(const physics::ShapeSpec& shape, const Pose& pose,
                                    const physics::TableBounds& table) {
  const Vec2 center = table.center();
  const Vec2 half = table.size() * 0.5;
  double d1, d2;
  if (shape.kind == physics::ShapeKind::kDisc) {
    d1 = d2 = 2.0 * shape.radius;
  } else {
    d1 = 2.0 * shape.half_extents.x;
    d2 = 2.0 * shape.half_extents.y;
  }
  const double ecc = shape.kind == physics::ShapeKind::kDisc ? 0.0 : (d1 - d2) / (d1 + d2);
  LatentCode code{};
  code[0] = static_cast<float>((pose.pos.x - center.x) / half.x);
  code[1] = static_cast<float>((pose.pos.y - center.y) / half.y);
  code[2] = static_cast<float>(ecc * std::cos(2.0 * pose.theta));
  code[3] = static_cast<float>(ecc * std::sin(2.0 * pose.theta));
  code[4] = static_cast<float>(d1 / kMaxFootprint);
  code[5] = static_cast<float>(d2 / kMaxFootprint);
  return code;
}

}  // namespace pushlab::vision
