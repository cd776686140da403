#include "ivaloc/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace ivaloc {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0 && std::isfinite(learning_rate))) throw ConfigError("train: learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("train: Adam betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("train: adam_epsilon must be positive");
    if (max_epochs == 0) throw ConfigError("train: max_epochs must be positive");
    if (!(loss_clamp_epsilon > 0.0 && loss_clamp_epsilon < 0.5))
        throw ConfigError("train: loss_clamp_epsilon must lie in (0, 0.5)");
}

void TrainConfig::write(KeyValues& kv) const {
    kv["train.learning_rate"] = format_double(learning_rate);
    kv["train.batch_size"] = std::to_string(batch_size);
    kv["train.adam_beta1"] = format_double(adam_beta1);
    kv["train.adam_beta2"] = format_double(adam_beta2);
    kv["train.adam_epsilon"] = format_double(adam_epsilon);
    kv["train.max_epochs"] = std::to_string(max_epochs);
    kv["train.patience"] = std::to_string(patience);
    kv["train.loss_clamp_epsilon"] = format_double(loss_clamp_epsilon);
    kv["train.seed"] = std::to_string(seed);
}

TrainConfig TrainConfig::read(const KeyValues& kv) {
    TrainConfig c;
    auto dbl = [&](const char* key, double& dst) {
        if (auto it = kv.find(key); it != kv.end()) dst = parse_double(it->second, key);
    };
    auto sz = [&](const char* key, std::size_t& dst) {
        if (auto it = kv.find(key); it != kv.end()) dst = parse_uint(it->second, key);
    };
    dbl("train.learning_rate", c.learning_rate);
    sz("train.batch_size", c.batch_size);
    dbl("train.adam_beta1", c.adam_beta1);
    dbl("train.adam_beta2", c.adam_beta2);
    dbl("train.adam_epsilon", c.adam_epsilon);
    sz("train.max_epochs", c.max_epochs);
    sz("train.patience", c.patience);
    dbl("train.loss_clamp_epsilon", c.loss_clamp_epsilon);
    if (auto it = kv.find("train.seed"); it != kv.end()) c.seed = parse_uint(it->second, "train.seed");
    return c;
}

AdamState AdamState::for_parameters(const ParameterSet& params) {
    AdamState s;
    s.m = params.zero_gradients();
    s.v = params.zero_gradients();
    return s;
}

void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state, const TrainConfig& config) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ContractError("adam_step: gradient/state count does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto n = params[i].tensor.data.size();
        if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n)
            throw ContractError("adam_step: size mismatch for " + params[i].name);
        for (double g : grads[i])
            if (!std::isfinite(g))
                throw NumericError("training aborted: non-finite gradient in " + params[i].name + " at step " +
                                   std::to_string(state.t + 1));
    }
    ++state.t;
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& theta = params[i].tensor.data;
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        for (std::size_t k = 0; k < theta.size(); ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            theta[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
        }
    }
}

double batch_gradients(const Model& model, std::span<const PreparedSample* const> batch, Gradients& grads, Mode mode,
                       Rng& rng) {
    if (batch.empty()) throw ContractError("batch_gradients: empty batch");
    grads = model.parameters().zero_gradients();
    const double factor = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const PreparedSample* s : batch) {
        if (s->label != 0 && s->label != 1) throw ContractError("training sample " + s->record_id + " is unlabeled");
        Tape tape;
        const ForwardPass fp = forward(model, tape, s->values, mode, &rng);
        const Var l = bce_with_logits(fp.logit, static_cast<double>(s->label));
        tape.backward(l);
        model.parameters().accumulate(tape, fp.params, grads, factor);
        loss += factor * l.item();
    }
    return loss;
}

double train_epoch(Model& model, std::span<const PreparedSample> samples, const TrainConfig& config, AdamState& state,
                   Rng& rng) {
    if (samples.empty()) throw ContractError("train_epoch: empty sample set");
    config.validate();
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    Gradients grads;
    std::vector<const PreparedSample*> batch;
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        batch.clear();
        for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k)
            batch.push_back(&samples[order[k]]);
        const double loss = batch_gradients(model, batch, grads, Mode::Train, rng);
        if (!std::isfinite(loss)) throw NumericError("training aborted: non-finite loss in batch " + std::to_string(batches));
        adam_step(model.parameters(), grads, state, config);
        total += loss;
        ++batches;
    }
    return total / static_cast<double>(batches);
}

PredictionBatch predict_batch(const Model& model, std::span<const PreparedSample> samples) {
    PredictionBatch out;
    for (const auto& s : samples) out.push(s.record_id, s.label, predict(model, s));
    return out;
}

FitResult fit(AblationVariant variant, const ModelConfig& model_config, std::span<const PreparedSample> train,
              std::span<const PreparedSample> val, const TrainConfig& config) {
    config.validate();
    if (train.empty()) throw ContractError("fit: empty training set");
    {
        PredictionBatch labels;
        for (const auto& s : val) labels.push(s.record_id, s.label, 0.5);
        if (!labels.has_both_classes()) throw DataError("fit: validation set must contain both classes");
    }

    FitResult res{build_model(variant, model_config, derive_seed(config.seed, 0)), {}, 0, 0.0};
    Model& model = res.model;
    Rng rng(derive_seed(config.seed, 1));
    AdamState state = AdamState::for_parameters(model.parameters());
    std::vector<std::vector<double>> best;
    std::size_t since_best = 0;
    double best_loss = 0.0;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = train_epoch(model, train, config, state, rng);
        const PredictionBatch vp = predict_batch(model, val);
        entry.val_auc = roc_auc(vp);
        entry.val_loss = bce_loss(vp, config.loss_clamp_epsilon);
        if (epoch == 1 || entry.val_auc > res.best_val_auc ||
            (entry.val_auc == res.best_val_auc && entry.val_loss < best_loss)) {
            entry.is_best = true;
            res.best_val_auc = entry.val_auc;
            best_loss = entry.val_loss;
            res.best_epoch = epoch;
            best.clear();
            for (const auto& p : model.parameters()) best.push_back(p.tensor.data);
            since_best = 0;
        } else {
            ++since_best;
        }
        res.log.push_back(entry);
        if (since_best >= config.patience) break;
    }
    for (std::size_t i = 0; i < best.size(); ++i) model.parameters()[i].tensor.data = std::move(best[i]);
    return res;
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,train_loss,val_auc,is_best,val_loss\n";
    for (const auto& e : log)
        out += std::to_string(e.epoch) + ',' + format_double(e.train_loss) + ',' + format_double(e.val_auc) + ',' +
               (e.is_best ? "1" : "0") + ',' + format_double(e.val_loss) + '\n';
    return out;
}

// ---------------------------------------------------------------------------

void HyperparamSpace::validate() const {
    auto range = [](const IntRange& r, const char* name) {
        if (r.lo == 0 || r.lo > r.hi) throw ConfigError(std::string("search: invalid range for ") + name);
    };
    range(conv_layers, "conv_layers");
    range(bilstm_layers, "bilstm_layers");
    range(lstm_units, "lstm_units");
    range(attention_nodes, "attention_nodes");
    range(fc_layers, "fc_layers");
    range(fc_nodes, "fc_nodes");
    if (conv_layers.hi < 5) throw ConfigError("search: conv_layers range admits no valid plan (need >= 5)");
    if (!(lr_lo > 0.0 && lr_lo <= lr_hi)) throw ConfigError("search: invalid learning-rate range");
    if (batch_sizes.empty() || std::count(batch_sizes.begin(), batch_sizes.end(), 0u) > 0)
        throw ConfigError("search: batch_sizes must be non-empty and positive");
    if (channel_divisor == 0 || 64 % channel_divisor != 0) throw ConfigError("search: channel_divisor must divide 64");
}

namespace {

std::size_t draw(const IntRange& r, Rng& rng) {
    return std::uniform_int_distribution<std::size_t>(r.lo, r.hi)(rng);
}

bool within(const IntRange& r, std::size_t v) { return v >= r.lo && v <= r.hi; }

}  // namespace

HyperparamSpace::Sample HyperparamSpace::sample(Rng& rng) const {
    validate();
    Sample s;
    for (;;) {
        const std::size_t n_conv = draw(conv_layers, rng);
        ModelConfig c;
        c.input_length = input_length;
        c.n_bilstm_layers = draw(bilstm_layers, rng);
        c.lstm_units = draw(lstm_units, rng);
        c.attention_dim = draw(attention_nodes, rng);
        c.n_fc_layers = draw(fc_layers, rng);
        c.fc_nodes = draw(fc_nodes, rng);
        s.learning_rate = std::exp(std::uniform_real_distribution<double>(std::log(lr_lo), std::log(lr_hi))(rng));
        s.learning_rate = std::clamp(s.learning_rate, lr_lo, lr_hi);
        s.batch_size = batch_sizes[std::uniform_int_distribution<std::size_t>(0, batch_sizes.size() - 1)(rng)];
        try {
            c.conv_blocks = ModelConfig::vgg_plan(n_conv, channel_divisor);
            c.required_encoding = std::nullopt;
            c.required_encoding = EncodedShape{512 / channel_divisor, input_length == 1250 ? 78 : c.encoded_shape().length};
            c.validate();
        } catch (const ConfigError&) {
            ++s.rejected;
            continue;
        }
        s.model = std::move(c);
        return s;
    }
}

bool HyperparamSpace::contains(const ModelConfig& m, double lr, std::size_t batch) const {
    return within(conv_layers, m.n_conv_layers()) && within(bilstm_layers, m.n_bilstm_layers) &&
           within(lstm_units, m.lstm_units) && within(attention_nodes, m.attention_dim) &&
           within(fc_layers, m.n_fc_layers) && within(fc_nodes, m.fc_nodes) && lr >= lr_lo && lr <= lr_hi &&
           std::find(batch_sizes.begin(), batch_sizes.end(), batch) != batch_sizes.end();
}

void HyperparamSpace::write(KeyValues& kv) const {
    auto range = [&](const char* key, const IntRange& r) {
        kv[key] = std::to_string(r.lo) + ":" + std::to_string(r.hi);
    };
    range("search.conv_layers", conv_layers);
    range("search.bilstm_layers", bilstm_layers);
    range("search.lstm_units", lstm_units);
    range("search.attention_nodes", attention_nodes);
    range("search.fc_layers", fc_layers);
    range("search.fc_nodes", fc_nodes);
    kv["search.learning_rate"] = format_double(lr_lo) + ":" + format_double(lr_hi);
    std::string b;
    for (auto v : batch_sizes) b += (b.empty() ? "" : ",") + std::to_string(v);
    kv["search.batch_sizes"] = b;
    kv["search.channel_divisor"] = std::to_string(channel_divisor);
    kv["search.input_length"] = std::to_string(input_length);
}

HyperparamSpace HyperparamSpace::read(const KeyValues& kv) {
    HyperparamSpace s;
    auto pair = [&](const char* key) -> std::optional<std::pair<std::string, std::string>> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        const auto parts = split(it->second, ':');
        if (parts.size() == 1) return std::make_pair(parts[0], parts[0]);
        if (parts.size() != 2) throw ConfigError(std::string(key) + ": expected lo:hi");
        return std::make_pair(parts[0], parts[1]);
    };
    auto range = [&](const char* key, IntRange& r) {
        if (auto p = pair(key)) r = {parse_uint(p->first, key), parse_uint(p->second, key)};
    };
    range("search.conv_layers", s.conv_layers);
    range("search.bilstm_layers", s.bilstm_layers);
    range("search.lstm_units", s.lstm_units);
    range("search.attention_nodes", s.attention_nodes);
    range("search.fc_layers", s.fc_layers);
    range("search.fc_nodes", s.fc_nodes);
    if (auto p = pair("search.learning_rate")) {
        s.lr_lo = parse_double(p->first, "search.learning_rate");
        s.lr_hi = parse_double(p->second, "search.learning_rate");
    }
    if (auto it = kv.find("search.batch_sizes"); it != kv.end()) {
        s.batch_sizes.clear();
        for (const auto& b : split(it->second, ',')) s.batch_sizes.push_back(parse_uint(b, "search.batch_sizes"));
    }
    if (auto it = kv.find("search.channel_divisor"); it != kv.end())
        s.channel_divisor = parse_uint(it->second, "search.channel_divisor");
    if (auto it = kv.find("search.input_length"); it != kv.end())
        s.input_length = parse_uint(it->second, "search.input_length");
    return s;
}

namespace {

std::string trial_key(const TrialRecord& t) {
    KeyValues kv;
    t.model.write(kv);
    kv["lr"] = format_double(t.train.learning_rate);
    kv["batch"] = std::to_string(t.train.batch_size);
    return to_text(kv);
}

// Runs job(i) for i in [0, n) over up to `jobs` threads.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& job) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) job(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace

SearchResult random_search(const HyperparamSpace& space, std::size_t n_trials, AblationVariant variant,
                           std::span<const PreparedSample> train, std::span<const PreparedSample> val,
                           const TrainConfig& base, std::size_t jobs) {
    if (n_trials == 0) throw ContractError("random_search: n_trials must be >= 1");
    space.validate();
    base.validate();

    SearchResult res;
    Rng rng(base.seed);
    std::map<std::string, std::size_t> first_seen;
    std::vector<std::size_t> unique;
    for (std::size_t i = 0; i < n_trials; ++i) {
        auto s = space.sample(rng);
        TrialRecord t;
        t.index = i;
        t.seed = base.seed ^ static_cast<std::uint64_t>(i);
        t.model = std::move(s.model);
        t.train = base;
        t.train.learning_rate = s.learning_rate;
        t.train.batch_size = s.batch_size;
        t.train.seed = t.seed;
        auto [it, fresh] = first_seen.emplace(trial_key(t), i);
        if (fresh) unique.push_back(i);
        else t.reused_from = it->second;
        res.trials.push_back(std::move(t));
    }

    parallel_for(unique.size(), jobs, [&](std::size_t k) {
        TrialRecord& t = res.trials[unique[k]];
        try {
            FitResult f = fit(variant, t.model, train, val, t.train);
            t.val_auc = f.best_val_auc;
            t.best_epoch = f.best_epoch;
        } catch (const std::exception& e) {
            t.error = e.what();
        }
    });
    for (auto& t : res.trials) {
        if (!t.reused_from) continue;
        const TrialRecord& src = res.trials[*t.reused_from];
        t.val_auc = src.val_auc;
        t.best_epoch = src.best_epoch;
        t.error = src.error;
        t.seed = src.seed;
        t.train.seed = src.train.seed;
    }

    std::optional<std::size_t> best;
    for (const auto& t : res.trials)
        if (t.val_auc && (!best || *t.val_auc > *res.trials[*best].val_auc)) best = t.index;
    if (!best) {
        std::string msg = "random_search: all " + std::to_string(n_trials) + " trials failed";
        for (const auto& t : res.trials) msg += "\n  trial " + std::to_string(t.index) + ": " + t.error;
        throw ContractError(msg);
    }
    res.best_trial = *best;
    res.best_model = res.trials[*best].model;
    res.best_train = res.trials[*best].train;
    res.best_val_auc = *res.trials[*best].val_auc;
    return res;
}

std::string search_log_csv(const SearchResult& result) {
    std::ostringstream os;
    os << "trial,seed,n_conv_layers,n_bilstm_layers,lstm_units,attention_dim,n_fc_layers,fc_nodes,learning_rate,"
          "batch_size,val_auc,best_epoch,reused_from,error\n";
    for (const auto& t : result.trials) {
        std::string err = t.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        os << t.index << ',' << t.seed << ',' << t.model.n_conv_layers() << ',' << t.model.n_bilstm_layers << ','
           << t.model.lstm_units << ',' << t.model.attention_dim << ',' << t.model.n_fc_layers << ','
           << t.model.fc_nodes << ',' << format_double(t.train.learning_rate) << ',' << t.train.batch_size << ','
           << (t.val_auc ? format_double(*t.val_auc) : "NA") << ',' << t.best_epoch << ','
           << (t.reused_from ? std::to_string(*t.reused_from) : "") << ',' << err << '\n';
    }
    return os.str();
}

}  // namespace ivaloc
