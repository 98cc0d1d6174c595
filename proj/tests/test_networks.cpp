#include "agestyle/networks.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace agestyle;
using namespace agestyle::testing;

namespace {

GeneratorSpec small_spec() {
  GeneratorSpec g;
  g.n_layers = 4;
  g.base_channels = 4;
  g.image_size = 32;
  return g;
}

template <typename Scalar>
StyleStats<Scalar> style_from(const Discriminator<Scalar>& d, const Tensor<Scalar>& target, int n_layers) {
  return extract_style(d.forward(target).activations, LayerMap::mirrored(n_layers));
}

}  // namespace

TEST_CASE("channel widths saturate at the multiplier cap") {
  GeneratorSpec g;
  CHECK(g.channels(0) == 32);
  CHECK(g.channels(2) == 128);
  CHECK(g.channels(3) == 256);
  CHECK(g.channels(5) == 256);
  CHECK(g.resolution(0) == 64);
  CHECK(g.resolution(5) == 2);
}

TEST_CASE("specs reject inconsistent pyramids") {
  GeneratorSpec g = small_spec();
  g.image_size = 40;  // not divisible by 2^4
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = small_spec();
  g.n_layers = 0;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  CHECK_THROWS_AS(Generator<float>(g, 1), std::invalid_argument);
}

TEST_CASE("every discriminator layer mirrors a decoder layer") {
  for (int n : {2, 4, 6}) {
    GeneratorSpec g;
    g.n_layers = n;
    g.image_size = 128;
    const auto d = DiscriminatorSpec::mirror_of(g);
    for (int k = 0; k < n; ++k) CHECK(d.activation_shape(k) == g.decoder_layer_shape(n - 1 - k));
  }
}

TEST_CASE("generator and discriminator shapes") {
  const auto g = small_spec();
  const auto ds = DiscriminatorSpec::mirror_of(g);
  Generator<float> gen(g, 1);
  Discriminator<float> disc(ds, 2);
  std::mt19937_64 rng(3);
  const Tensor<float> x = random_tensor(Shape{3, 3, 32, 32}, rng).cast<float>();

  const auto dout = disc.forward(x);
  CHECK(dout.logits.shape() == Shape{3, 4, 1, 1});
  REQUIRE(dout.activations.size() == 4);
  for (int k = 0; k < 4; ++k) CHECK(dout.activations[std::size_t(k)].shape() == ds.activation_shape(k, 3));

  const auto out = gen.forward(x, extract_style(dout.activations, LayerMap::mirrored(4)));
  CHECK(out.image.shape() == x.shape());
  CHECK(out.image.value().array().abs().maxCoeff() <= 1.0f);
  REQUIRE(out.decoder_activations.size() == 4);
  for (int j = 0; j < 4; ++j) {
    CHECK(out.decoder_activations[std::size_t(j)].shape() == g.decoder_layer_shape(j, 3));
  }
}

TEST_CASE("generator rejects wrong inputs") {
  const auto g = small_spec();
  Generator<float> gen(g, 1);
  Discriminator<float> disc(DiscriminatorSpec::mirror_of(g), 2);
  const Tensor<float> x(Shape{1, 3, 32, 32});
  const auto style = style_from(disc, x, 4);
  CHECK_THROWS_AS(gen.forward(Tensor<float>(Shape{1, 3, 16, 16}), style), ShapeError);
  auto short_style = style;
  short_style.layers.pop_back();
  CHECK_THROWS_AS(gen.forward(x, short_style), std::invalid_argument);
  CHECK_THROWS_AS(disc.forward(Tensor<float>(Shape{1, 1, 32, 32})), ShapeError);
}

TEST_CASE("samples in a batch do not interact") {
  const auto g = small_spec();
  Generator<float> gen(g, 4);
  Discriminator<float> disc(DiscriminatorSpec::mirror_of(g), 5);
  std::mt19937_64 rng(6);
  const Tensor<float> a = random_tensor(Shape{1, 3, 32, 32}, rng).cast<float>();
  const Tensor<float> b = random_tensor(Shape{1, 3, 32, 32}, rng).cast<float>();
  const Tensor<float> t = random_tensor(Shape{1, 3, 32, 32}, rng).cast<float>();
  const std::vector<Tensor<float>> parts{a, b};
  const auto ab = stack_batch<float>(parts);
  const std::vector<Tensor<float>> targets{t, t};
  const auto tt = stack_batch<float>(targets);

  NoGradGuard ng;
  const auto batched = gen.forward(ab, style_from(disc, tt, 4)).image.value();
  const auto single = gen.forward(a, style_from(disc, t, 4)).image.value();
  CHECK((batched.slice_batch(0, 1).array() - single.array()).abs().maxCoeff() < 1e-5f);

  const auto dl = disc.forward(ab).logits.value();
  const auto sl = disc.forward(b).logits.value();
  CHECK((dl.slice_batch(1, 1).array() - sl.array()).abs().maxCoeff() < 1e-5f);
}

TEST_CASE("a shared target style broadcasts over the batch") {
  const auto g = small_spec();
  Generator<float> gen(g, 4);
  Discriminator<float> disc(DiscriminatorSpec::mirror_of(g), 5);
  std::mt19937_64 rng(7);
  const Tensor<float> x = random_tensor(Shape{2, 3, 32, 32}, rng).cast<float>();
  const Tensor<float> t = random_tensor(Shape{1, 3, 32, 32}, rng).cast<float>();
  const std::vector<Tensor<float>> tt{t, t};
  NoGradGuard ng;
  const auto shared = gen.forward(x, style_from(disc, t, 4)).image.value();
  const auto repeated = gen.forward(x, style_from(disc, stack_batch<float>(tt), 4)).image.value();
  CHECK((shared.array() - repeated.array()).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("the target image changes the output") {
  const auto g = small_spec();
  Generator<float> gen(g, 8);
  Discriminator<float> disc(DiscriminatorSpec::mirror_of(g), 9);
  std::mt19937_64 rng(10);
  const Tensor<float> x = random_tensor(Shape{1, 3, 32, 32}, rng).cast<float>();
  const Tensor<float> t1 = random_tensor(Shape{1, 3, 32, 32}, rng).cast<float>();
  const Tensor<float> t2 = Tensor<float>::constant(Shape{1, 3, 32, 32}, -0.5f);
  NoGradGuard ng;
  const auto y1 = gen.forward(x, style_from(disc, t1, 4)).image.value();
  const auto y2 = gen.forward(x, style_from(disc, t2, 4)).image.value();
  CHECK((y1.array() - y2.array()).abs().maxCoeff() > 1e-3f);
}

TEST_CASE("initialization is seeded") {
  const auto g = small_spec();
  CHECK(Generator<float>(g, 1).parameters().hash() == Generator<float>(g, 1).parameters().hash());
  CHECK(Generator<float>(g, 1).parameters().hash() != Generator<float>(g, 2).parameters().hash());
  const auto d = DiscriminatorSpec::mirror_of(g);
  CHECK(Discriminator<float>(d, 1).parameters().hash() == Discriminator<float>(d, 1).parameters().hash());
}

TEST_CASE("every parameter receives a gradient") {
  const auto g = small_spec();
  Generator<double> gen(g, 11);
  Discriminator<double> disc(DiscriminatorSpec::mirror_of(g), 12);
  std::mt19937_64 rng(13);
  const Tensord x = random_tensor(Shape{2, 3, 32, 32}, rng);
  const Tensord t = random_tensor(Shape{2, 3, 32, 32}, rng);
  Vard y = gen.forward(constant(x), style_from(disc, t, 4)).image;
  Vard logits = disc.forward(y).logits;
  backward(sum(mul(logits, constant(random_tensor(logits.shape(), rng)))));
  for (const auto& e : gen.parameters().entries()) {
    INFO(e.name);
    REQUIRE(e.var.has_grad());
    CHECK(e.var.grad().array().abs().maxCoeff() > 0.0);
  }
  for (const auto& e : disc.parameters().entries()) {
    INFO(e.name);
    REQUIRE(e.var.has_grad());
    CHECK(e.var.grad().array().abs().maxCoeff() > 0.0);
  }
}

TEST_CASE("select_logit picks the head of each sample's group") {
  Tensord l(Shape{2, 4, 1, 1});
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 4; ++c) l(n, c, 0, 0) = double(10 * n + c);
  Vard logits(l, true);
  const std::vector<AgeGroup> groups{AgeGroup(3), AgeGroup(1)};
  Vard s = select_logit(logits, std::span<const AgeGroup>(groups));
  CHECK(s.shape() == Shape{2, 1, 1, 1});
  CHECK(s.value()(0, 0, 0, 0) == 3.0);
  CHECK(s.value()(1, 0, 0, 0) == 11.0);
  auto grads = gradients(sum(s), {logits});
  CHECK(grads[0].value()(0, 3, 0, 0) == 1.0);
  CHECK(grads[0].value()(0, 0, 0, 0) == 0.0);
  CHECK(grads[0].value()(1, 1, 0, 0) == 1.0);
  const std::vector<AgeGroup> wrong{AgeGroup(0)};
  CHECK_THROWS(select_logit(logits, std::span<const AgeGroup>(wrong)));
}
