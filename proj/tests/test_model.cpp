#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "ivaloc/model.hpp"
#include "test_support.hpp"

using namespace ivaloc;
using ivaloc::testing::random_tensor;

namespace {

ModelConfig tiny_config(std::size_t length = 64) { return ModelConfig::width_reduced(16, length); }

PreparedSample sample_of(Tensor values, std::string id = "s") {
    PreparedSample s;
    s.values = std::move(values);
    s.record_id = std::move(id);
    return s;
}

std::vector<double> values(const Var& v) { return {v.value().begin(), v.value().end()}; }

}  // namespace

TEST_CASE("default config shape chain") {
    const ModelConfig c;
    CHECK(c.n_conv_layers() == 13);
    CHECK(c.encoded_shape() == EncodedShape{512, 78});
    CHECK_NOTHROW(c.validate());

    const Model model(AblationVariant::Full, c, 1);
    Tape tape;
    const ForwardPass fp = forward(model, tape, random_tensor({12, 1250}, 2), Mode::Infer);
    CHECK(fp.input.shape() == Shape{12, 1250});
    CHECK(fp.encoded.shape() == Shape{512, 78});
    CHECK(fp.states.shape() == Shape{78, 128});
    CHECK(fp.features.shape() == Shape{128});
    REQUIRE(fp.attention_weights);
    CHECK(fp.attention_weights->shape() == Shape{78});
    CHECK(fp.logit.size() == 1);
    const double p = fp.probability.item();
    CHECK(p > 0.0);
    CHECK(p < 1.0);
}

TEST_CASE("pooling chain uses floor division") {
    ModelConfig c;
    std::vector<std::size_t> lengths{c.input_length};
    for (std::size_t b = 0; b + 1 < c.conv_blocks.size(); ++b) lengths.push_back(lengths.back() / 2);
    CHECK(lengths == std::vector<std::size_t>{1250, 625, 312, 156, 78});
}

TEST_CASE("shape-chain violations") {
    ModelConfig c;
    c.conv_blocks.pop_back();  // three pools: 1250 -> 156
    CHECK_THROWS_AS(c.validate(), ConfigError);
    ModelConfig wrong_width;
    wrong_width.conv_blocks.back().back() = 256;
    CHECK_THROWS_AS(wrong_width.validate(), ConfigError);
    CHECK_THROWS_AS(Model(AblationVariant::Full, c, 0), ConfigError);
}

TEST_CASE("vgg plan") {
    CHECK(ModelConfig::vgg_plan(13) == ModelConfig{}.conv_blocks);
    CHECK(ModelConfig::vgg_plan(5) == std::vector<std::vector<std::size_t>>{{64}, {128}, {256}, {512}, {512}});
    CHECK(ModelConfig::vgg_plan(15).back().size() == 3);
    CHECK(ModelConfig::vgg_plan(13, 16).front() == std::vector<std::size_t>{4, 4});
    CHECK_THROWS_AS(ModelConfig::vgg_plan(4), ConfigError);
}

TEST_CASE("config key-value round trip") {
    ModelConfig c = tiny_config();
    c.dropout_p = 0.3;
    KeyValues kv;
    c.write(kv);
    const ModelConfig back = ModelConfig::read(kv);
    KeyValues again;
    back.write(again);
    CHECK(kv == again);
    CHECK(parse_conv_blocks(format_conv_blocks(c.conv_blocks)) == c.conv_blocks);
}

TEST_CASE("variants") {
    const ModelConfig c = tiny_config();
    std::vector<std::size_t> counts;
    for (auto v : kAllVariants) {
        const Model m(v, c, 3);
        counts.push_back(m.parameters().scalar_count());
        CHECK(parse_variant(variant_name(v)) == v);
    }
    CHECK(std::is_sorted(counts.begin(), counts.end(), std::less_equal<>()));
    CHECK(std::adjacent_find(counts.begin(), counts.end()) == counts.end());
    CHECK_FALSE(parse_variant("bogus"));

    const Model vgg(AblationVariant::VggOnly, c, 3);
    for (const auto& p : vgg.parameters()) CHECK(p.name.find("lstm") == std::string::npos);
    CHECK(vgg.head_input() == c.encoded_shape().channels);
    CHECK(Model(AblationVariant::VggLstm1, c, 3).head_input() == c.lstm_units);
    CHECK(Model(AblationVariant::VggBiLstm2, c, 3).head_input() == 2 * c.lstm_units);
    CHECK_FALSE(Model(AblationVariant::VggBiLstm2, c, 3).has_attention());
}

TEST_CASE("vgg-only head sees the time-mean of the encoding") {
    const ModelConfig c = tiny_config();
    const Model m(AblationVariant::VggOnly, c, 4);
    Tape tape;
    const ForwardPass fp = forward(m, tape, random_tensor({12, 64}, 5), Mode::Infer);
    const auto enc = values(fp.encoded);
    const std::size_t t = fp.encoded.shape()[1];
    const auto feats = values(fp.features);
    for (std::size_t ch = 0; ch < feats.size(); ++ch) {
        const double mean = std::accumulate(enc.begin() + ch * t, enc.begin() + (ch + 1) * t, 0.0) / t;
        CHECK(feats[ch] == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("deterministic construction and inference") {
    const ModelConfig c = tiny_config();
    const Model a(AblationVariant::Full, c, 9), b(AblationVariant::Full, c, 9), other(AblationVariant::Full, c, 10);
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        CHECK(a.parameters()[i].tensor.data == b.parameters()[i].tensor.data);
    CHECK(a.parameters()[0].tensor.data != other.parameters()[0].tensor.data);

    const PreparedSample s = sample_of(random_tensor({12, 64}, 11));
    CHECK(predict(a, s) == predict(a, s));
    CHECK(predict(a, s) == predict(b, s));

    Rng r1(1), r2(1), r3(2);
    const double t1 = predict(a, s, Mode::Train, &r1), t2 = predict(a, s, Mode::Train, &r2);
    CHECK(t1 == t2);
    bool differs = false;
    for (int k = 0; k < 5 && !differs; ++k) differs = predict(a, s, Mode::Train, &r3) != t1;
    CHECK(differs);
    Tape tape;
    CHECK_THROWS_AS(forward(a, tape, s.values, Mode::Train, nullptr), ContractError);
}

TEST_CASE("input shape is checked") {
    const Model m(AblationVariant::Full, tiny_config(), 1);
    Tape tape;
    CHECK_THROWS_AS(forward(m, tape, random_tensor({12, 63}, 1), Mode::Infer), ShapeError);
    Tape tape2;
    CHECK_THROWS_AS(forward(m, tape2, random_tensor({11, 64}, 1), Mode::Infer), ShapeError);
}

TEST_CASE("zero input stays finite and in range") {
    for (auto v : kAllVariants) {
        const Model m(v, tiny_config(), 2);
        const double p = predict(m, sample_of(Tensor({12, 64})));
        CHECK(std::isfinite(p));
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
    const Model m(AblationVariant::Full, tiny_config(), 2);
    const double big = predict(m, sample_of(random_tensor({12, 64}, 3, -1e3, 1e3)));
    CHECK(big > 0.0);
    CHECK(big < 1.0);
}

TEST_CASE("attention") {
    Tape t;
    const std::size_t d = 6, a = 3;
    const AttentionVars p{t.leaf(random_tensor({a, d}, 1)), t.leaf(random_tensor({a}, 2)), t.leaf(random_tensor({1, a}, 3)),
                          t.leaf(random_tensor({1}, 4))};

    SUBCASE("matches the explicit weighted average") {
        const Tensor states = random_tensor({4, d}, 5);
        const AttentionOutput out = attention(t.leaf(states), p);
        const auto w = values(out.weights);
        std::vector<double> scores(4);
        for (std::size_t s = 0; s < 4; ++s) {
            double e = p.b2.value()[0];
            for (std::size_t j = 0; j < a; ++j) {
                double hj = p.b1.value()[j];
                for (std::size_t k = 0; k < d; ++k) hj += p.w1.value()[j * d + k] * states.data[s * d + k];
                e += p.w2.value()[j] * std::tanh(hj);
            }
            scores[s] = e;
        }
        const double mx = *std::max_element(scores.begin(), scores.end());
        double z = 0;
        for (double e : scores) z += std::exp(e - mx);
        for (std::size_t s = 0; s < 4; ++s) CHECK(w[s] == doctest::Approx(std::exp(scores[s] - mx) / z).epsilon(1e-12));
        const auto ctx = values(out.context);
        for (std::size_t k = 0; k < d; ++k) {
            double expect = 0;
            for (std::size_t s = 0; s < 4; ++s) expect += w[s] * states.data[s * d + k];
            CHECK(std::abs(ctx[k] - expect) < 1e-9);
        }
    }
    SUBCASE("identical states give uniform weights") {
        Tensor states({5, d});
        for (std::size_t s = 0; s < 5; ++s)
            for (std::size_t k = 0; k < d; ++k) states.data[s * d + k] = 0.1 * static_cast<double>(k);
        const AttentionOutput out = attention(t.leaf(states), p);
        for (double w : values(out.weights)) CHECK(w == doctest::Approx(0.2).epsilon(1e-12));
        for (std::size_t k = 0; k < d; ++k) CHECK(values(out.context)[k] == doctest::Approx(0.1 * k).epsilon(1e-12));
    }
    SUBCASE("single step") {
        const Tensor states = random_tensor({1, d}, 6);
        const AttentionOutput out = attention(t.leaf(states), p);
        CHECK(values(out.weights) == std::vector<double>{1.0});
        CHECK(values(out.context) == states.data);
    }
}

TEST_CASE("attention weights over model inputs") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Model m(AblationVariant::Full, ModelConfig::width_reduced(16), seed);
        const auto w = attention_weights(m, sample_of(random_tensor({12, 1250}, 100 + seed, -3, 3)));
        REQUIRE(w.size() == 78);
        CHECK(std::all_of(w.begin(), w.end(), [](double x) { return x >= 0.0; }));
        CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-6);
        const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
        CHECK(*hi / *lo < 5.0);
    }
    const Model vgg(AblationVariant::VggBiLstm2, tiny_config(), 0);
    CHECK_THROWS_AS(attention_weights(vgg, sample_of(Tensor({12, 64}))), ContractError);
}

TEST_CASE("lstm layer time reversal") {
    Tape t;
    const std::size_t d = 3, h = 2;
    const LstmWeights w{t.leaf(random_tensor({4 * h, d}, 1)), t.leaf(random_tensor({4 * h, h}, 2)),
                        t.leaf(random_tensor({4 * h}, 3))};
    const Tensor seq = random_tensor({3, d}, 4);
    Tensor rev({3, d});
    for (std::size_t s = 0; s < 3; ++s)
        std::copy_n(seq.data.begin() + (2 - s) * d, d, rev.data.begin() + s * d);
    const auto backward_states = lstm_layer(t.leaf(seq), w, true);
    const auto forward_on_reversed = lstm_layer(t.leaf(rev), w, false);
    for (std::size_t s = 0; s < 3; ++s) CHECK(values(forward_on_reversed[s]) == values(backward_states[2 - s]));
}

TEST_CASE("zero-parameter recurrent stack gives zero states") {
    Model m(AblationVariant::VggBiLstm2, tiny_config(), 1);
    for (std::size_t i = 0; i < m.parameters().size(); ++i)
        if (m.parameters()[i].name.find("lstm") != std::string::npos)
            std::fill(m.parameters()[i].tensor.data.begin(), m.parameters()[i].tensor.data.end(), 0.0);
    Tape tape;
    const ForwardPass fp = forward(m, tape, random_tensor({12, 64}, 2), Mode::Infer);
    for (double v : values(fp.states)) CHECK(v == 0.0);
}

TEST_CASE("head on a zero context") {
    Model m(AblationVariant::Full, tiny_config(), 1);
    Tape tape;
    const auto params = m.parameters().bind(tape);
    const Var ctx = tape.leaf(Tensor({m.head_input()}));
    CHECK(sigmoid(head_forward(m, params, ctx, Mode::Infer, nullptr)).item() == 0.5);
}

TEST_CASE("identity permutation of the time axis is bit-identical") {
    const Model m(AblationVariant::Full, tiny_config(), 5);
    const Tensor x = random_tensor({12, 64}, 6);
    Tape t1, t2;
    const ForwardPass a = forward(m, t1, x, Mode::Infer);
    const ForwardPass b = forward(m, t2, x, Mode::Infer);
    CHECK(values(a.features) == values(b.features));

    Tape t3;
    const auto params = m.parameters().bind(t3);
    const Var enc = encoder_forward(m, params, t3.leaf(x));
    const auto [states, summary] = recurrent_forward(m, params, enc);
    const std::size_t steps = enc.shape()[1];
    std::vector<std::size_t> order(steps);
    std::iota(order.begin(), order.end(), 0);
    std::reverse(order.begin(), order.end());
    Tensor permuted({enc.shape()[0], steps});
    for (std::size_t c = 0; c < enc.shape()[0]; ++c)
        for (std::size_t s = 0; s < steps; ++s) permuted.data[c * steps + s] = enc.value()[c * steps + order[s]];
    const auto [states2, summary2] = recurrent_forward(m, params, t3.leaf(permuted));
    CHECK(values(states2) != values(states));
}

TEST_CASE("width-reduced full model passes finite differences") {
    Model m(AblationVariant::Full, tiny_config(64), 21);
    const double err = ivaloc::testing::model_fd_error(m, random_tensor({12, 64}, 22), 1.0, 6, 23);
    INFO("relative error " << err);
    CHECK(err < 1e-4);
}

TEST_CASE("checkpoint round trip") {
    const auto path = std::filesystem::temp_directory_path() / "ivaloc_model_roundtrip.ckpt";
    const Model m(AblationVariant::VggBiLstm1, tiny_config(), 7);
    save_model(path, m);
    const Model back = load_model(path);
    CHECK(back.variant() == m.variant());
    for (std::size_t i = 0; i < m.parameters().size(); ++i)
        CHECK(back.parameters()[i].tensor.data == m.parameters()[i].tensor.data);
    const PreparedSample s = sample_of(random_tensor({12, 64}, 8));
    CHECK(predict(back, s) == predict(m, s));

    Checkpoint ckpt = load_checkpoint(path);
    ckpt.header = "format=something-else\n";
    CHECK_THROWS_AS(model_from_checkpoint(ckpt), VersionError);
    std::filesystem::remove(path);
}
