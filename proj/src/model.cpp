#include "ivaloc/model.hpp"

#include <algorithm>

namespace ivaloc {

std::string_view variant_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::VggOnly: return "vgg";
        case AblationVariant::VggLstm1: return "vgg-lstm1";
        case AblationVariant::VggBiLstm1: return "vgg-bilstm1";
        case AblationVariant::VggBiLstm2: return "vgg-bilstm2";
        case AblationVariant::Full: return "full";
    }
    return "unknown";
}

std::optional<AblationVariant> parse_variant(std::string_view s) {
    for (auto v : kAllVariants)
        if (variant_name(v) == s) return v;
    return std::nullopt;
}

// ---------------------------------------------------------------------------

std::size_t ModelConfig::n_conv_layers() const {
    std::size_t n = 0;
    for (const auto& b : conv_blocks) n += b.size();
    return n;
}

EncodedShape ModelConfig::encoded_shape() const {
    std::size_t len = input_length;
    for (std::size_t b = 0; b + 1 < conv_blocks.size(); ++b) len /= 2;
    const std::size_t ch = conv_blocks.empty() || conv_blocks.back().empty() ? 0 : conv_blocks.back().back();
    return {ch, len};
}

void ModelConfig::validate() const {
    if (input_channels == 0 || input_length == 0) throw ConfigError("model: input shape must be positive");
    if (conv_blocks.empty()) throw ConfigError("model: conv plan has no blocks");
    for (const auto& block : conv_blocks) {
        if (block.empty()) throw ConfigError("model: conv plan has an empty block");
        for (auto c : block)
            if (c == 0) throw ConfigError("model: conv plan has a zero-channel layer");
    }
    if (kernel_size == 0 || kernel_size % 2 == 0) throw ConfigError("model: kernel size must be odd");
    if (lstm_units == 0 || n_bilstm_layers == 0 || attention_dim == 0 || fc_nodes == 0 || n_fc_layers == 0)
        throw ConfigError("model: layer widths and counts must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
    if (!(leaky_slope >= 0.0)) throw ConfigError("model: leaky slope must be non-negative");
    std::size_t len = input_length;
    for (std::size_t b = 0; b + 1 < conv_blocks.size(); ++b) {
        if (len < 2)
            throw ConfigError("model: shape-chain violation, pooling after block " + std::to_string(b + 1) +
                              " sees length " + std::to_string(len));
        len /= 2;
    }
    const EncodedShape got = encoded_shape();
    if (required_encoding && got != *required_encoding)
        throw ConfigError("model: shape-chain violation, conv plan " + format_conv_blocks(conv_blocks) + " maps " +
                          std::to_string(input_channels) + "x" + std::to_string(input_length) + " to " +
                          std::to_string(got.channels) + "x" + std::to_string(got.length) + ", required " +
                          std::to_string(required_encoding->channels) + "x" +
                          std::to_string(required_encoding->length));
}

std::vector<std::vector<std::size_t>> ModelConfig::vgg_plan(std::size_t n_conv_layers, std::size_t channel_divisor) {
    constexpr std::array<std::size_t, 5> widths = {64, 128, 256, 512, 512};
    if (n_conv_layers < widths.size())
        throw ConfigError("model: a five-block VGG plan needs at least 5 conv layers, got " +
                          std::to_string(n_conv_layers));
    if (channel_divisor == 0) throw ConfigError("model: channel divisor must be positive");
    const std::size_t base = n_conv_layers / widths.size(), extra = n_conv_layers % widths.size();
    std::vector<std::vector<std::size_t>> plan;
    for (std::size_t b = 0; b < widths.size(); ++b) {
        const std::size_t count = base + (b >= widths.size() - extra ? 1 : 0);
        plan.emplace_back(count, std::max<std::size_t>(1, widths[b] / channel_divisor));
    }
    return plan;
}

ModelConfig ModelConfig::width_reduced(std::size_t divisor, std::size_t input_length) {
    if (divisor == 0) throw ConfigError("model: width divisor must be positive");
    ModelConfig c;
    c.input_length = input_length;
    c.conv_blocks = vgg_plan(13, divisor);
    c.lstm_units = std::max<std::size_t>(1, 64 / divisor);
    c.attention_dim = std::max<std::size_t>(1, 64 / divisor);
    c.fc_nodes = std::max<std::size_t>(1, 256 / divisor);
    c.required_encoding = std::nullopt;
    c.required_encoding = c.encoded_shape();
    return c;
}

std::string format_conv_blocks(const std::vector<std::vector<std::size_t>>& blocks) {
    std::string out;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (b) out += '|';
        for (std::size_t i = 0; i < blocks[b].size(); ++i) {
            if (i) out += ',';
            out += std::to_string(blocks[b][i]);
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> parse_conv_blocks(std::string_view text) {
    std::vector<std::vector<std::size_t>> blocks;
    for (const auto& b : split(text, '|')) {
        std::vector<std::size_t> block;
        for (const auto& c : split(b, ',')) block.push_back(parse_uint(c, "model.conv_blocks"));
        blocks.push_back(std::move(block));
    }
    return blocks;
}

void ModelConfig::write(KeyValues& kv) const {
    kv["model.input_channels"] = std::to_string(input_channels);
    kv["model.input_length"] = std::to_string(input_length);
    kv["model.conv_blocks"] = format_conv_blocks(conv_blocks);
    kv["model.kernel_size"] = std::to_string(kernel_size);
    kv["model.lstm_units"] = std::to_string(lstm_units);
    kv["model.n_bilstm_layers"] = std::to_string(n_bilstm_layers);
    kv["model.attention_dim"] = std::to_string(attention_dim);
    kv["model.fc_nodes"] = std::to_string(fc_nodes);
    kv["model.n_fc_layers"] = std::to_string(n_fc_layers);
    kv["model.dropout_p"] = format_double(dropout_p);
    kv["model.leaky_slope"] = format_double(leaky_slope);
    kv["model.required_encoding"] = required_encoding ? std::to_string(required_encoding->channels) + "x" +
                                                            std::to_string(required_encoding->length)
                                                      : "none";
}

ModelConfig ModelConfig::read(const KeyValues& kv) {
    ModelConfig c;
    auto opt = [&](const char* key, auto&& apply) {
        if (auto it = kv.find(key); it != kv.end()) apply(it->second, key);
    };
    auto size_field = [&](const char* key, std::size_t& dst) {
        opt(key, [&](const std::string& v, const char* k) { dst = parse_uint(v, k); });
    };
    size_field("model.input_channels", c.input_channels);
    size_field("model.input_length", c.input_length);
    size_field("model.kernel_size", c.kernel_size);
    size_field("model.lstm_units", c.lstm_units);
    size_field("model.n_bilstm_layers", c.n_bilstm_layers);
    size_field("model.attention_dim", c.attention_dim);
    size_field("model.fc_nodes", c.fc_nodes);
    size_field("model.n_fc_layers", c.n_fc_layers);
    opt("model.conv_blocks", [&](const std::string& v, const char*) { c.conv_blocks = parse_conv_blocks(v); });
    opt("model.dropout_p", [&](const std::string& v, const char* k) { c.dropout_p = parse_double(v, k); });
    opt("model.leaky_slope", [&](const std::string& v, const char* k) { c.leaky_slope = parse_double(v, k); });
    opt("model.required_encoding", [&](const std::string& v, const char* k) {
        if (v == "none" || v.empty()) {
            c.required_encoding = std::nullopt;
            return;
        }
        const auto parts = split(v, 'x');
        if (parts.size() != 2) throw ConfigError(std::string(k) + ": expected CxT or none");
        c.required_encoding = EncodedShape{parse_uint(parts[0], k), parse_uint(parts[1], k)};
    });
    return c;
}

// ---------------------------------------------------------------------------

bool Model::bidirectional() const {
    return variant_ == AblationVariant::VggBiLstm1 || variant_ == AblationVariant::VggBiLstm2 ||
           variant_ == AblationVariant::Full;
}

std::size_t Model::recurrent_layers() const {
    switch (variant_) {
        case AblationVariant::VggOnly: return 0;
        case AblationVariant::VggLstm1:
        case AblationVariant::VggBiLstm1: return 1;
        case AblationVariant::VggBiLstm2: return 2;
        case AblationVariant::Full: return config_.n_bilstm_layers;
    }
    return 0;
}

std::size_t Model::head_input() const {
    if (variant_ == AblationVariant::VggOnly) return config_.encoded_shape().channels;
    return config_.lstm_units * (bidirectional() ? 2 : 1);
}

Model::Model(AblationVariant variant, ModelConfig config, std::uint64_t seed)
    : variant_(variant), config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    const std::size_t k = config_.kernel_size;

    std::size_t in_ch = config_.input_channels;
    for (std::size_t b = 0; b < config_.conv_blocks.size(); ++b) {
        std::vector<ConvLayout> block;
        for (std::size_t i = 0; i < config_.conv_blocks[b].size(); ++i) {
            const std::size_t out_ch = config_.conv_blocks[b][i];
            const std::string base = "conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1);
            ConvLayout l{};
            l.weight = params_.add(base + ".weight", {out_ch, in_ch, k}, Initializer::GlorotUniform, rng);
            l.bias = params_.add(base + ".bias", {out_ch}, Initializer::Zeros, rng);
            block.push_back(l);
            in_ch = out_ch;
        }
        conv_.push_back(std::move(block));
    }

    const std::size_t h = config_.lstm_units;
    std::size_t seq_dim = in_ch;
    auto add_direction = [&](const std::string& base, std::size_t d_in) {
        LstmLayout l;
        l.input = params_.add(base + ".input", {4 * h, d_in}, Initializer::GlorotUniform, rng);
        l.recurrent = params_.add(base + ".recurrent", {4 * h, h}, Initializer::OrthogonalBlocks, rng);
        l.bias = params_.add(base + ".bias", {4 * h}, Initializer::LstmForgetBias, rng);
        return l;
    };
    for (std::size_t layer = 0; layer < recurrent_layers(); ++layer) {
        const std::string base = "lstm" + std::to_string(layer + 1);
        LstmLayout fwd = add_direction(base + ".fwd", seq_dim);
        std::optional<LstmLayout> bwd;
        if (bidirectional()) bwd = add_direction(base + ".bwd", seq_dim);
        lstm_.emplace_back(fwd, bwd);
        seq_dim = h * (bidirectional() ? 2 : 1);
    }

    if (has_attention()) {
        AttentionLayout a{};
        a.w1 = params_.add("attention.w1", {config_.attention_dim, seq_dim}, Initializer::GlorotUniform, rng);
        a.b1 = params_.add("attention.b1", {config_.attention_dim}, Initializer::Zeros, rng);
        a.w2 = params_.add("attention.w2", {1, config_.attention_dim}, Initializer::GlorotUniform, rng);
        a.b2 = params_.add("attention.b2", {1}, Initializer::Zeros, rng);
        attention_ = a;
    }

    std::size_t width = head_input();
    for (std::size_t i = 0; i < config_.n_fc_layers; ++i) {
        const std::string base = "head.fc" + std::to_string(i + 1);
        head_.weights.push_back(params_.add(base + ".weight", {config_.fc_nodes, width}, Initializer::GlorotUniform, rng));
        head_.biases.push_back(params_.add(base + ".bias", {config_.fc_nodes}, Initializer::Zeros, rng));
        width = config_.fc_nodes;
    }
    head_.out_weight = params_.add("head.out.weight", {1, width}, Initializer::GlorotUniform, rng);
    head_.out_bias = params_.add("head.out.bias", {1}, Initializer::Zeros, rng);
}

std::string Model::header() const {
    KeyValues kv;
    kv["format"] = "ivaloc-model";
    kv["variant"] = std::string(variant_name(variant_));
    config_.write(kv);
    return to_text(kv);
}

Model build_model(AblationVariant variant, const ModelConfig& config, std::uint64_t seed) {
    return Model(variant, config, seed);
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    const KeyValues kv = parse_text(ckpt.header);
    if (auto it = kv.find("format"); it == kv.end() || it->second != "ivaloc-model")
        throw VersionError("checkpoint header does not describe an ivaloc model");
    const auto variant = parse_variant(get_string(kv, "variant"));
    if (!variant) throw VersionError("checkpoint header names an unknown variant");
    Model model(*variant, ModelConfig::read(kv), 0);
    restore_parameters(model.parameters(), ckpt);
    return model;
}

void save_model(const std::filesystem::path& path, const Model& model) {
    save_checkpoint(path, model.header(), model.parameters());
}

Model load_model(const std::filesystem::path& path) { return model_from_checkpoint(load_checkpoint(path)); }

// ---------------------------------------------------------------------------

AttentionOutput attention(const Var& states, const AttentionVars& p) {
    if (states.shape().size() != 2) throw ShapeError("attention: states must be T x D");
    const std::size_t steps = states.shape()[0];
    const Var hidden = tanh(dense_rows(states, p.w1, p.b1));
    const Var scores = reshape(dense_rows(hidden, p.w2, p.b2), {steps});
    const Var weights = softmax(scores);
    return {weighted_sum_rows(states, weights), weights};
}

std::vector<Var> lstm_layer(const Var& sequence, const LstmWeights& weights, bool reverse) {
    if (sequence.shape().size() != 2) throw ShapeError("lstm_layer: sequence must be T x D");
    const std::size_t steps = sequence.shape()[0];
    const std::size_t hidden = weights.recurrent.shape()[1];
    Tape& tape = *sequence.tape();
    const Var projected = dense_rows(sequence, weights.input, weights.bias);
    LstmState state{tape.leaf({hidden}, std::vector<double>(hidden, 0.0)),
                    tape.leaf({hidden}, std::vector<double>(hidden, 0.0))};
    std::vector<Var> out(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const std::size_t t = reverse ? steps - 1 - i : i;
        state = lstm_cell_from_projection(row(projected, t), state, weights.recurrent);
        out[t] = state.h;
    }
    return out;
}

Var encoder_forward(const Model& model, std::span<const Var> params, const Var& input) {
    const ModelConfig& cfg = model.config();
    if (input.shape() != Shape{cfg.input_channels, cfg.input_length})
        throw ShapeError("encoder: expected input " + std::to_string(cfg.input_channels) + "x" +
                         std::to_string(cfg.input_length) + ", got " + shape_string(input.shape()));
    Var x = input;
    const auto& blocks = model.conv_layout();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (const auto& layer : blocks[b])
            x = leaky_relu(conv1d(x, params[layer.weight], params[layer.bias]), cfg.leaky_slope);
        if (b + 1 < blocks.size()) x = maxpool1d(x, 2, 2);
    }
    return x;
}

std::pair<Var, Var> recurrent_forward(const Model& model, std::span<const Var> params, const Var& encoded) {
    if (model.recurrent_layers() == 0) throw ContractError("recurrent_forward: variant has no recurrent stage");
    auto weights_of = [&](const LstmLayout& l) {
        return LstmWeights{params[l.input], params[l.recurrent], params[l.bias]};
    };
    Var sequence = transpose(encoded);
    const std::size_t steps = sequence.shape()[0];
    Var summary;
    for (const auto& [fwd_layout, bwd_layout] : model.lstm_layout()) {
        const std::vector<Var> fwd = lstm_layer(sequence, weights_of(fwd_layout), false);
        if (!bwd_layout) {
            sequence = stack_rows(fwd);
            summary = fwd.back();
            continue;
        }
        const std::vector<Var> bwd = lstm_layer(sequence, weights_of(*bwd_layout), true);
        std::vector<Var> rows(steps);
        for (std::size_t t = 0; t < steps; ++t) {
            const std::array<Var, 2> pair = {fwd[t], bwd[t]};
            rows[t] = concat(pair);
        }
        sequence = stack_rows(rows);
        const std::array<Var, 2> finals = {fwd.back(), bwd.front()};
        summary = concat(finals);
    }
    return {sequence, summary};
}

Var head_forward(const Model& model, std::span<const Var> params, const Var& features, Mode mode, Rng* rng) {
    const ModelConfig& cfg = model.config();
    const auto& head = model.head_layout();
    const bool training = mode == Mode::Train && cfg.dropout_p > 0.0;
    if (training && !rng) throw ContractError("head_forward: train mode needs an rng for dropout");
    Var x = features;
    for (std::size_t i = 0; i < head.weights.size(); ++i) {
        x = leaky_relu(dense(x, params[head.weights[i]], params[head.biases[i]]), cfg.leaky_slope);
        if (training) x = dropout(x, cfg.dropout_p, true, *rng);
    }
    return dense(x, params[head.out_weight], params[head.out_bias]);
}

ForwardPass forward(const Model& model, Tape& tape, const Tensor& input, Mode mode, Rng* rng) {
    ForwardPass fp;
    fp.params = model.parameters().bind(tape);
    fp.input = tape.leaf(input.shape, input.data, false);
    fp.encoded = encoder_forward(model, fp.params, fp.input);
    if (model.variant() == AblationVariant::VggOnly) {
        fp.features = mean_last_axis(fp.encoded);
    } else {
        auto [states, summary] = recurrent_forward(model, fp.params, fp.encoded);
        fp.states = states;
        if (model.has_attention()) {
            const auto& a = *model.attention_layout();
            const AttentionOutput att =
                attention(states, {fp.params[a.w1], fp.params[a.b1], fp.params[a.w2], fp.params[a.b2]});
            fp.features = att.context;
            fp.attention_weights = att.weights;
        } else {
            fp.features = summary;
        }
    }
    fp.logit = head_forward(model, fp.params, fp.features, mode, rng);
    fp.probability = sigmoid(fp.logit);
    return fp;
}

double predict(const Model& model, const PreparedSample& sample, Mode mode, Rng* rng) {
    Tape tape;
    return forward(model, tape, sample.values, mode, rng).probability.item();
}

std::vector<double> predict_all(const Model& model, std::span<const PreparedSample> samples) {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(predict(model, s));
    return out;
}

std::vector<double> attention_weights(const Model& model, const PreparedSample& sample) {
    if (!model.has_attention()) throw ContractError("attention_weights: model variant has no attention stage");
    Tape tape;
    const ForwardPass fp = forward(model, tape, sample.values, Mode::Infer);
    auto w = fp.attention_weights->value();
    return {w.begin(), w.end()};
}

}  // namespace ivaloc
