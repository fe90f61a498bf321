#include <catch2/catch_amalgamated.hpp>

#include "vqtts/encoder.hpp"
#include "vqtts/gradcheck.hpp"

using namespace vqtts;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.mel_bands = 4;
  cfg.conv_channels = 6;
  cfg.conv_width = 3;
  cfg.downsample = 2;
  cfg.hidden = 6;
  cfg.out_dim = 5;
  return cfg;
}

Tensor random_mel(int64_t T, int64_t bands, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(T * bands));
  for (auto& x : v) x = rng.uniform(0.0, 1.0);
  return Tensor::from({T, bands}, std::move(v));
}

}  // namespace

TEST_CASE("encoder output follows the ceil(T/r) shape law", "[encoder]") {
  ParamRegistry reg;
  Rng rng(7);
  PhoneticEncoder enc;
  enc.init(reg, tiny_config(), rng);

  Rng data_rng(11);
  for (int64_t T = 1; T <= 12; ++T) {
    Tensor mel = random_mel(T, 4, data_rng);
    Tensor h = enc.encode(mel);
    CHECK(h.shape()[0] == (T + 1) / 2);
    CHECK(h.shape()[1] == 5);
  }

  Tensor bad = random_mel(8, 3, data_rng);
  CHECK_THROWS_AS(enc.encode(bad), std::invalid_argument);
}

TEST_CASE("encoder is deterministic", "[encoder]") {
  ParamRegistry reg;
  Rng rng(7);
  PhoneticEncoder enc;
  enc.init(reg, tiny_config(), rng);
  Rng data_rng(13);
  Tensor mel = random_mel(8, 4, data_rng);
  Tensor a = enc.encode(mel);
  Tensor b = enc.encode(mel);
  CHECK(a.value() == b.value());
}

TEST_CASE("encoder gradients match finite differences", "[encoder]") {
  ParamRegistry reg;
  Rng rng(7);
  PhoneticEncoder enc;
  enc.init(reg, tiny_config(), rng);
  Rng data_rng(17);
  Tensor mel = random_mel(5, 4, data_rng);

  auto fn = [&] {
    Tensor h = enc.encode(mel);
    return mean_t(mul(h, h));
  };
  GradCheckReport r = grad_check(fn, reg.params(), 1e-5);
  INFO("worst coordinate " << r.worst_coordinate);
  CHECK(r.max_rel_err <= 1e-4);
}

TEST_CASE("no dead encoder parameters over 10 seeds", "[encoder]") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    ParamRegistry reg;
    Rng rng(seed);
    PhoneticEncoder enc;
    enc.init(reg, tiny_config(), rng);
    Rng data_rng(seed + 100);
    Tensor mel = random_mel(9, 4, data_rng);
    Tensor h = enc.encode(mel);
    GradStore gs = backward(mean_t(mul(h, h)));
    for (const auto& p : reg.params()) {
      const auto* g = gs.find(p.raw());
      REQUIRE(g != nullptr);
      bool any = false;
      for (double v : *g) any = any || v != 0.0;
      INFO("parameter " << p.name() << " seed " << seed);
      CHECK(any);
    }
  }
}
