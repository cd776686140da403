#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ivaloc/key_values.hpp"
#include "ivaloc/parameters.hpp"
#include "ivaloc/signal_prep.hpp"
#include "ivaloc/tensor.hpp"

namespace ivaloc {

enum class AblationVariant { VggOnly, VggLstm1, VggBiLstm1, VggBiLstm2, Full };

inline constexpr std::array<AblationVariant, 5> kAllVariants = {
    AblationVariant::VggOnly, AblationVariant::VggLstm1, AblationVariant::VggBiLstm1, AblationVariant::VggBiLstm2,
    AblationVariant::Full};

/// CLI spelling: vgg, vgg-lstm1, vgg-bilstm1, vgg-bilstm2, full.
std::string_view variant_name(AblationVariant v);
std::optional<AblationVariant> parse_variant(std::string_view s);

struct EncodedShape {
    std::size_t channels = 0;
    std::size_t length = 0;
    bool operator==(const EncodedShape&) const = default;
};

struct ModelConfig {
    std::size_t input_channels = kLeadCount;
    std::size_t input_length = 1250;
    /// VGG blocks of conv output channels; a 2x max-pool follows every block but the last.
    std::vector<std::vector<std::size_t>> conv_blocks = {
        {64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
    std::size_t kernel_size = 3;
    std::size_t lstm_units = 64;
    std::size_t n_bilstm_layers = 2;
    std::size_t attention_dim = 64;
    std::size_t fc_nodes = 256;
    std::size_t n_fc_layers = 2;
    double dropout_p = 0.2;
    double leaky_slope = 0.01;
    /// Encoder output the plan must produce; nullopt skips the check.
    std::optional<EncodedShape> required_encoding = EncodedShape{512, 78};

    std::size_t n_conv_layers() const;
    EncodedShape encoded_shape() const;
    /// Throws ConfigError on an inconsistent plan or shape-chain violation.
    void validate() const;

    /// Spreads `n_conv_layers` over five VGG blocks (64,128,256,512,512 channels
    /// divided by `channel_divisor`), later blocks taking the remainder.
    static std::vector<std::vector<std::size_t>> vgg_plan(std::size_t n_conv_layers, std::size_t channel_divisor = 1);
    /// Every width (channels, units, attention, FC nodes) divided by `divisor`.
    static ModelConfig width_reduced(std::size_t divisor, std::size_t input_length = 1250);

    void write(KeyValues& kv) const;
    static ModelConfig read(const KeyValues& kv);
};

std::string format_conv_blocks(const std::vector<std::vector<std::size_t>>& blocks);
std::vector<std::vector<std::size_t>> parse_conv_blocks(std::string_view text);

enum class Mode { Train, Infer };

/// Parameter indices of one LSTM direction.
struct LstmLayout {
    std::size_t input = 0, recurrent = 0, bias = 0;
};

class Model {
public:
    Model(AblationVariant variant, ModelConfig config, std::uint64_t seed);

    AblationVariant variant() const { return variant_; }
    const ModelConfig& config() const { return config_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

    bool has_attention() const { return variant_ == AblationVariant::Full; }
    bool bidirectional() const;
    std::size_t recurrent_layers() const;
    /// Length of the vector the FC head consumes.
    std::size_t head_input() const;

    /// Checkpoint header describing variant and config.
    std::string header() const;

    struct ConvLayout {
        std::size_t weight, bias;
    };
    struct HeadLayout {
        std::vector<std::size_t> weights, biases;
        std::size_t out_weight, out_bias;
    };
    struct AttentionLayout {
        std::size_t w1, b1, w2, b2;
    };

    const std::vector<std::vector<ConvLayout>>& conv_layout() const { return conv_; }
    const std::vector<std::pair<LstmLayout, std::optional<LstmLayout>>>& lstm_layout() const { return lstm_; }
    const std::optional<AttentionLayout>& attention_layout() const { return attention_; }
    const HeadLayout& head_layout() const { return head_; }

private:
    AblationVariant variant_;
    ModelConfig config_;
    ParameterSet params_;
    std::vector<std::vector<ConvLayout>> conv_;
    std::vector<std::pair<LstmLayout, std::optional<LstmLayout>>> lstm_;
    std::optional<AttentionLayout> attention_;
    HeadLayout head_;
};

Model build_model(AblationVariant variant, const ModelConfig& config, std::uint64_t seed);
/// Rebuilds a model from a checkpoint header and restores its parameters.
Model model_from_checkpoint(const Checkpoint& ckpt);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

struct AttentionVars {
    Var w1, b1, w2, b2;
};

struct AttentionOutput {
    Var context;  // 2H
    Var weights;  // T
};

/// Additive attention: e_t = w2 . tanh(W1 h_t + b1) + b2, alpha = softmax(e), context = sum alpha_t h_t.
AttentionOutput attention(const Var& states, const AttentionVars& params);

/// Runs one LSTM direction over the rows of `sequence` (T x D); returns h_t in time order.
std::vector<Var> lstm_layer(const Var& sequence, const LstmWeights& weights, bool reverse);

/// Everything recorded on the tape for one forward pass.
struct ForwardPass {
    std::vector<Var> params;
    Var input;
    Var encoded;   // C x T
    Var states;    // T x 2H (bidirectional variants), T x H (VggLstm1), unset for VggOnly
    Var features;  // head input
    std::optional<Var> attention_weights;
    Var logit;
    Var probability;
};

Var encoder_forward(const Model& model, std::span<const Var> params, const Var& input);
/// Stacked recurrent layers over the time axis of `encoded` (C x T). Returns the
/// top-layer per-step states and the final-state summary used by non-attention variants.
std::pair<Var, Var> recurrent_forward(const Model& model, std::span<const Var> params, const Var& encoded);
Var head_forward(const Model& model, std::span<const Var> params, const Var& features, Mode mode, Rng* rng);

ForwardPass forward(const Model& model, Tape& tape, const Tensor& input, Mode mode, Rng* rng = nullptr);

/// Probability of RVOT. Infer mode is deterministic; train mode needs `rng` for dropout.
double predict(const Model& model, const PreparedSample& sample, Mode mode = Mode::Infer, Rng* rng = nullptr);
std::vector<double> predict_all(const Model& model, std::span<const PreparedSample> samples);

/// Attention weights over the encoded time steps (Full variant only).
std::vector<double> attention_weights(const Model& model, const PreparedSample& sample);

}  // namespace ivaloc
