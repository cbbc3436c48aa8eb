#include <cmath>
#include <cstdio>

#include <doctest.h>

#include "pushlab/env.hpp"
#include "pushlab/vision.hpp"

using namespace pushlab;
using namespace pushlab::vision;

namespace {

physics::TableBounds default_table() {
  physics::TableBounds t;
  t.lo = {-0.2, -0.2};
  t.hi = {0.2, 0.2};
  return t;
}

physics::ShapeSpec disc(double r) {
  physics::ShapeSpec s;
  s.kind = physics::ShapeKind::kDisc;
  s.radius = r;
  return s;
}

physics::ShapeSpec rect(double hx, double hy) {
  physics::ShapeSpec s;
  s.kind = physics::ShapeKind::kRectangle;
  s.half_extents = {hx, hy};
  return s;
}

}  // namespace

TEST_CASE("render_mask") {
  const Camera cam = Camera::covering(default_table());

  SUBCASE("camera covers the table exactly") {
    CHECK(cam.meters_per_pixel == doctest::Approx(0.4 / 64));
    CHECK(cam.origin.x == doctest::Approx(-0.2));
  }

  SUBCASE("disc pixel count is close to the analytic area") {
    const Mask m = render_mask(disc(0.05), {{0.0, 0.0}, 0.0}, cam);
    const double expected = M_PI * std::pow(0.05 / cam.meters_per_pixel, 2.0);
    CHECK(std::abs(m.pixel_count() - expected) <= 0.05 * expected);
  }

  SUBCASE("rectangle rotated by pi/2 equals swapped half extents") {
    const Mask a = render_mask(rect(0.05, 0.03), {{0.013, -0.027}, M_PI / 2.0}, cam);
    const Mask b = render_mask(rect(0.03, 0.05), {{0.013, -0.027}, 0.0}, cam);
    CHECK(a.grid == b.grid);
  }

  SUBCASE("integer-pixel translation shifts the mask exactly") {
    const double mpp = cam.meters_per_pixel;
    const Pose base{{-0.043, 0.021}, 0.7};
    const int dx = 4, dy = -3;
    const Pose moved{{base.pos.x + dx * mpp, base.pos.y + dy * mpp}, base.theta};
    const Mask a = render_mask(rect(0.05, 0.03), base, cam);
    const Mask b = render_mask(rect(0.05, 0.03), moved, cam);
    CHECK(a.pixel_count() == b.pixel_count());
    for (int r = 0; r < kMaskSize; ++r) {
      for (int c = 0; c < kMaskSize; ++c) {
        const int r2 = r + dy, c2 = c + dx;
        if (r2 < 0 || r2 >= kMaskSize || c2 < 0 || c2 >= kMaskSize) continue;
        CHECK(a.at(r, c) == b.at(r2, c2));
      }
    }
  }

  SUBCASE("rendering is deterministic") {
    const Mask a = render_mask(disc(0.045), {{0.05, -0.08}, 1.2}, cam);
    const Mask b = render_mask(disc(0.045), {{0.05, -0.08}, 1.2}, cam);
    CHECK(a.grid == b.grid);
  }

  SUBCASE("a footprint entirely outside the view is an error") {
    CHECK_THROWS_AS(render_mask(disc(0.04), {{5.0, 5.0}, 0.0}, cam), RenderError);
  }
}

TEST_CASE("oracle_descriptor") {
  const physics::TableBounds table = default_table();

  SUBCASE("disc orientation components vanish at any angle") {
    for (const double theta : {0.0, 0.4, -2.0, 3.1}) {
      const LatentCode z = oracle_descriptor(disc(0.05), {{0.05, 0.02}, theta}, table);
      CHECK(z[2] == 0.0f);
      CHECK(z[3] == 0.0f);
    }
  }

  SUBCASE("rectangle descriptor is invariant under rotation by pi") {
    const LatentCode a = oracle_descriptor(rect(0.05, 0.03), {{0.01, 0.0}, 0.8}, table);
    const LatentCode b =
        oracle_descriptor(rect(0.05, 0.03), {{0.01, 0.0}, 0.8 + M_PI}, table);
    for (int i = 0; i < kLatentDim; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));
  }

  SUBCASE("a square footprint has zero eccentricity") {
    const LatentCode z = oracle_descriptor(rect(0.04, 0.04), {{0.0, 0.0}, 0.9}, table);
    CHECK(z[2] == 0.0f);
    CHECK(z[3] == 0.0f);
  }

  SUBCASE("centroid components are normalized table coordinates") {
    const LatentCode z = oracle_descriptor(disc(0.05), {{0.1, -0.2}, 0.0}, table);
    CHECK(z[0] == doctest::Approx(0.5));
    CHECK(z[1] == doctest::Approx(-1.0));
  }
}

TEST_CASE("latent codes are always 6-dimensional and finite") {
  Rng rng(2);
  EncoderModel model = EncoderModel::init(rng);
  const Camera cam = Camera::covering(default_table());
  const Mask m = render_mask(disc(0.05), {{0.0, 0.0}, 0.0}, cam);

  const LatentCode from_encoder = encode(model, m);
  const LatentCode from_oracle = oracle_descriptor(disc(0.05), {{0.0, 0.0}, 0.0},
                                                   default_table());
  CHECK(from_encoder.size() == 6);
  CHECK(from_oracle.size() == 6);
  for (const float v : from_encoder) CHECK(std::isfinite(v));

  SUBCASE("same mask encodes to the same code") {
    const LatentCode again = encode(model, m);
    for (int i = 0; i < kLatentDim; ++i) CHECK(again[i] == from_encoder[i]);
  }

  SUBCASE("the all-zero mask still encodes to a finite code") {
    Mask zero;
    zero.meters_per_pixel = cam.meters_per_pixel;
    zero.origin = cam.origin;
    const LatentCode code = encode(model, zero);
    for (const float v : code) CHECK(std::isfinite(v));
  }
}

TEST_CASE("train_autoencoder") {
  const Camera cam = Camera::covering(default_table());

  SUBCASE("zero epochs returns the initialized model with a finite loss") {
    const std::vector<Mask> data{render_mask(disc(0.05), {{0.0, 0.0}, 0.0}, cam)};
    const EncoderModel m = train_autoencoder(data, 0, 3);
    CHECK(m.epochs_trained == 0);
    CHECK(std::isfinite(m.final_loss));
    CHECK(m.epoch_losses.empty());
  }

  SUBCASE("an empty dataset is rejected") {
    CHECK_THROWS_AS(train_autoencoder({}, 1, 0), std::invalid_argument);
  }

  SUBCASE("a single mask is overfit to IoU above 0.95") {
    const std::vector<Mask> data{render_mask(disc(0.05), {{0.02, -0.03}, 0.0}, cam)};
    TrainEncoderOptions opts;
    opts.batch_size = 1;
    opts.learning_rate = 1e-3;
    const EncoderModel m = train_autoencoder(data, 400, 4, opts);
    CHECK(m.epoch_losses.front() > m.epoch_losses.back());
    CHECK(reconstruction_iou(m, data[0]) > 0.95);
  }
}

TEST_CASE("encoder checkpoints round-trip") {
  Rng rng(8);
  EncoderModel model = EncoderModel::init(rng);
  model.epochs_trained = 7;
  model.final_loss = 0.123f;
  const std::string path = "test_encoder_ck.bin";
  save_encoder(model, path);
  EncoderModel loaded = load_encoder(path);
  CHECK(loaded.epochs_trained == 7);
  CHECK(loaded.final_loss == doctest::Approx(0.123f));

  const Camera cam = Camera::covering(default_table());
  const Mask m = render_mask(disc(0.05), {{0.0, 0.0}, 0.0}, cam);
  const LatentCode a = encode(model, m);
  const LatentCode b = encode(loaded, m);
  for (int i = 0; i < kLatentDim; ++i) CHECK(a[i] == b[i]);
  std::remove(path.c_str());
}
