#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spiro/data.hpp"
#include "spiro/metrics.hpp"
#include "spiro/network.hpp"

namespace spiro {

class TrainingError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Flat key=value lines; '#' starts a comment. Later keys override earlier ones.
std::map<std::string, std::string> parse_kv(std::istream& is, const std::string& source = "<config>");
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path);

struct TrainConfig {
    SpiroNetConfig net;
    double lr_init = 0.05;
    int epochs = 60;
    std::size_t batch_size = 4;
    bool augment = true;
    SgdConfig sgd;
    std::uint64_t seed = 0;

    void validate() const;
    /// Recognised keys: lr, epochs, batch_size, augment, momentum, weight_decay, plus every network
    /// header key. Unknown keys throw ConfigError.
    void apply(const std::map<std::string, std::string>& kv);
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double val_iou = 0;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    int best_epoch = -1;
    double best_val_iou = -1;
    double final_train_iou = 0;  // best checkpoint re-evaluated on the un-augmented train split
    std::size_t params = 0;
};

/// Writes train_log.csv, best.ckpt (highest val IoU), last.ckpt (final epoch) and summary.txt into
/// out_dir. Progress lines go to `progress` when non-null. Throws TrainingError naming epoch and
/// batch on a non-finite loss.
template <typename T>
TrainResult train_model(const TrainConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir,
                        std::ostream* progress = nullptr);

void write_train_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log);
std::vector<EpochRecord> read_train_log(const std::filesystem::path& path);

}  // namespace spiro
