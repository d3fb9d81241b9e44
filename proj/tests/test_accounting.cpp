#include <doctest.h>

#include "madmil/accounting.hpp"
#include "madmil/error.hpp"

using namespace madmil;

namespace {

ModelConfig wsi(Aggregator agg, std::size_t heads = 1, std::size_t classes = 2) {
  ModelConfig cfg;
  cfg.input_dim = 1024;
  cfg.embed_dim = 512;
  cfg.aggregator = agg;
  cfg.heads = heads;
  cfg.classes = classes;
  return cfg;
}

ModelConfig mnist(Aggregator agg, std::size_t heads = 1) {
  ModelConfig cfg;
  cfg.aggregator = agg;
  cfg.heads = heads;
  return cfg;
}

}  // namespace

TEST_CASE("parameter counts for the feature-bag models") {
  CHECK(param_count(wsi(Aggregator::abmil)) == 788'739);
  CHECK(param_count(wsi(Aggregator::mean_pool)) == 525'826);
  CHECK(param_count(wsi(Aggregator::max_pool)) == 525'826);
  CHECK(param_count(wsi(Aggregator::madmil, 3)) == 614'839);
  CHECK(param_count(wsi(Aggregator::madmil, 2)) == 657'668);
  CHECK(param_count(wsi(Aggregator::madmil, 8)) == 559'370);
  CHECK(format_thousands(788'739) == "788.7 K");
  CHECK(format_thousands(525'826) == "525.8 K");
  CHECK(format_thousands(614'839) == "614.8 K");
}

TEST_CASE("parameter counts for the MNIST models") {
  CHECK(param_count(mnist(Aggregator::abmil)) == 167'043);
  CHECK(param_count(mnist(Aggregator::madmil, 4)) == 105'030);
  CHECK(param_count(mnist(Aggregator::mean_pool)) == 100'738);
  CHECK(mnist(Aggregator::madmil, 4).head_width() == 32);
  CHECK(mnist(Aggregator::madmil, 4).head_hidden() == 16);
}

TEST_CASE("head geometry for a remainder split") {
  const ModelConfig cfg = wsi(Aggregator::madmil, 3);
  CHECK(cfg.head_width() == 171);
  CHECK(cfg.head_hidden() == 86);
  CHECK(cfg.padded_width() == 513);
  CHECK(cfg.output_width() == 512);
}

TEST_CASE("FLOPs at 120 instances") {
  CHECK(flops(wsi(Aggregator::mean_pool), 120) == 62'914'560 + 1'024);
  CHECK(flops(wsi(Aggregator::abmil), 120) == 94'403'584);
  CHECK(flops(wsi(Aggregator::madmil, 3), 120) == 73'534'864);
  CHECK(flops(wsi(Aggregator::madmil, 2), 120) == 78'674'944);
  CHECK(flops(wsi(Aggregator::madmil, 8), 120) == 66'878'464);
  CHECK(flops(mnist(Aggregator::abmil), 120) == 19'937'536);
  CHECK(flops(mnist(Aggregator::madmil, 4), 120) == 12'541'696);
  CHECK(format_millions(94'403'584) == "94.4 M");
  CHECK(format_millions(73'534'864) == "73.5 M");
}

TEST_CASE("FLOPs are affine in N with the classifier as intercept") {
  for (const ModelConfig& cfg : {wsi(Aggregator::abmil), wsi(Aggregator::madmil, 3),
                                 mnist(Aggregator::max_pool), mnist(Aggregator::madmil, 6)}) {
    const std::uint64_t intercept = cfg.output_width() * cfg.classes;
    const std::uint64_t slope = flops(cfg, 1) - intercept;
    for (std::size_t N : {2, 17, 120, 1000}) CHECK(flops(cfg, N) == N * slope + intercept);
  }
  CHECK_THROWS_AS(flops(mnist(Aggregator::abmil), 0), ConfigError);
}

TEST_CASE("three-class model stays within one percent of the published size") {
  const auto mad = wsi(Aggregator::madmil, 5, 3);
  const auto ref = reference_figures(mad);
  REQUIRE(ref);
  const double k = static_cast<double>(param_count(mad)) / 1e3;
  CHECK(std::abs(k - ref->size_k) / ref->size_k < 0.01);
}

TEST_CASE("reference lookup") {
  CHECK(reference_figures(wsi(Aggregator::abmil)));
  CHECK_FALSE(reference_figures(wsi(Aggregator::madmil, 4)));
  ModelConfig custom = wsi(Aggregator::abmil);
  custom.attention_hidden = 128;
  CHECK_FALSE(reference_figures(custom));
}

TEST_CASE("attention_hidden overrides the default widths") {
  ModelConfig cfg = mnist(Aggregator::madmil, 1);
  cfg.attention_hidden = 256;
  ModelConfig abmil = mnist(Aggregator::abmil);
  CHECK(param_count(cfg) == param_count(abmil));
  CHECK(flops(cfg, 50) == flops(abmil, 50));
}
