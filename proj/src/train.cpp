#include "spiro/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "spiro/optim.hpp"

namespace spiro {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("config key '" + key + "': not a number: " + v);
    return out;
}

long to_long(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long out = 0;
    try {
        out = std::stol(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("config key '" + key + "': not an integer: " + v);
    return out;
}

}  // namespace

std::map<std::string, std::string> parse_kv(std::istream& is, const std::string& source) {
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    return parse_kv(is, path.string());
}

void TrainConfig::validate() const {
    net.validate();
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr_init > 0)) throw ConfigError("lr must be > 0");
}

void TrainConfig::apply(const std::map<std::string, std::string>& kv) {
    static const std::set<std::string> net_keys = {
        "input_size",          "stages",          "base_channels",        "ppm_bins", "tci_inner_dim",
        "use_spatial_encoder", "use_frequency_encoder", "use_cross_attention", "use_tci", "precision"};
    if (auto it = kv.find("variant"); it != kv.end()) net.ablation = ablation_variant(it->second).ablation;
    ConfigHeader header = net.to_header();
    for (const auto& [k, v] : kv) {
        if (net_keys.count(k)) {
            header.emplace_back(k, v);
        } else if (k == "variant") {
        } else if (k == "lr") {
            lr_init = to_double(k, v);
        } else if (k == "epochs") {
            epochs = static_cast<int>(to_long(k, v));
        } else if (k == "batch_size") {
            const long b = to_long(k, v);
            if (b < 1) throw ConfigError("batch_size must be >= 1");
            batch_size = static_cast<std::size_t>(b);
        } else if (k == "augment") {
            augment = v == "1" || v == "true";
            if (!augment && v != "0" && v != "false") throw ConfigError("config key 'augment': not a boolean: " + v);
        } else if (k == "momentum") {
            sgd.momentum = to_double(k, v);
        } else if (k == "weight_decay") {
            sgd.weight_decay = to_double(k, v);
        } else if (k == "seed") {
            const long s = to_long(k, v);
            if (s < 0) throw ConfigError("seed must be >= 0");
            seed = static_cast<std::uint64_t>(s);
        } else {
            throw ConfigError("unknown config key '" + k + "'");
        }
    }
    net = SpiroNetConfig::from_header(header);
    net.seed = seed;
}

void write_train_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw TrainingError("cannot write " + path.string());
    os << "epoch,lr,train_loss,val_iou\n" << std::setprecision(17);
    for (const auto& r : log) os << r.epoch << "," << r.lr << "," << r.train_loss << "," << r.val_iou << "\n";
}

std::vector<EpochRecord> read_train_log(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw TrainingError("cannot read " + path.string());
    std::string line;
    std::getline(is, line);
    std::vector<EpochRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        EpochRecord r;
        std::getline(ss, cell, ',');
        r.epoch = std::stoi(cell);
        std::getline(ss, cell, ',');
        r.lr = std::stod(cell);
        std::getline(ss, cell, ',');
        r.train_loss = std::stod(cell);
        std::getline(ss, cell, ',');
        r.val_iou = std::stod(cell);
        out.push_back(r);
    }
    return out;
}

template <typename T>
TrainResult train_model(const TrainConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir,
                        std::ostream* progress) {
    cfg.validate();
    if (data.train.empty() || data.test.empty()) throw TrainingError("dataset needs non-empty train and test splits");
    for (const auto* part : {&data.train, &data.test}) {
        for (const auto& s : *part) {
            if (s.height != cfg.net.input_size || s.width != cfg.net.input_size) {
                throw TrainingError("sample '" + s.id + "' is " + std::to_string(s.height) + "x" +
                                    std::to_string(s.width) + ", network expects input_size " +
                                    std::to_string(cfg.net.input_size));
            }
        }
    }
    std::filesystem::create_directories(out_dir);

    SpiroNet<T> net = SpiroNet<T>::build(cfg.net, cfg.seed);
    SgdMomentum<T> opt(net.parameters(), cfg.sgd);
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + 1);

    TrainResult result;
    result.params = net.count_params();
    std::ostringstream lr_text;
    lr_text << std::setprecision(17) << cfg.lr_init;
    const ConfigHeader extra = {{"lr", lr_text.str()}, {"epochs", std::to_string(cfg.epochs)},
                                {"batch_size", std::to_string(cfg.batch_size)}};
    const auto ckpt = out_dir / "best.ckpt";
    std::vector<std::size_t> order(data.train.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = poly_lr(cfg.lr_init, epoch, cfg.epochs);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batches) {
            std::vector<Sample> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
                const Sample& s = data.train[order[i]];
                batch.push_back(cfg.augment ? augment(s, rng) : s);
            }
            std::vector<std::size_t> idx(batch.size());
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            auto [x, y] = make_batch<T>(batch, idx);
            try {
                opt.zero_grad();
                Tensor<T> loss = loss_bce(net.forward(x, Mode::train), y);
                backward(loss);
                opt.step(lr);
                loss_sum += static_cast<double>(loss.item());
            } catch (const NumericError& e) {
                throw TrainingError("non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batches) + ": " + e.what());
            }
        }
        EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(batches), 0.0};
        rec.val_iou = evaluate_dataset(net, data.test).mean.iou;
        result.log.push_back(rec);
        if (rec.val_iou > result.best_val_iou) {
            result.best_val_iou = rec.val_iou;
            result.best_epoch = epoch;
            ConfigHeader h = extra;
            h.emplace_back("best_epoch", std::to_string(epoch));
            net.save(ckpt, h);
        }
        write_train_log(out_dir / "train_log.csv", result.log);
        if (progress) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            *progress << "epoch " << epoch << " lr " << lr << " loss " << rec.train_loss << " val_iou "
                      << rec.val_iou << " (" << std::fixed << std::setprecision(1) << secs << " s)"
                      << std::defaultfloat << std::setprecision(6) << std::endl;
        }
    }

    {
        ConfigHeader h = extra;
        h.emplace_back("epoch", std::to_string(cfg.epochs - 1));
        net.save(out_dir / "last.ckpt", h);
    }
    const SpiroNet<T> best = SpiroNet<T>::load(ckpt);
    result.final_train_iou = evaluate_dataset(best, data.train).mean.iou;
    std::ofstream sum(out_dir / "summary.txt", std::ios::binary);
    sum << std::setprecision(17) << "seed=" << cfg.seed << "\nparams=" << result.params
        << "\nepochs=" << cfg.epochs << "\nbest_epoch=" << result.best_epoch
        << "\nbest_val_iou=" << result.best_val_iou << "\nfinal_train_iou=" << result.final_train_iou << "\n";
    return result;
}

template TrainResult train_model<float>(const TrainConfig&, const Dataset&, const std::filesystem::path&,
                                        std::ostream*);
template TrainResult train_model<double>(const TrainConfig&, const Dataset&, const std::filesystem::path&,
                                         std::ostream*);

}  // namespace spiro
