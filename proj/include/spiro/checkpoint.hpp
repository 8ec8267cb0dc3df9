#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "spiro/optim.hpp"

namespace spiro {

// Binary layout, all integers little-endian:
//   "SPIRO1"
//   u8   value width in bytes (4 = f32, 8 = f64)
//   u32  header length, then that many bytes of UTF-8 "key=value\n" lines (may be empty)
//   u32  tensor count
//   per tensor: u32 name length, UTF-8 name, 4 x u32 shape (N,C,H,W), raw values

using ConfigHeader = std::vector<std::pair<std::string, std::string>>;

class CheckpointError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

template <typename T>
struct Checkpoint {
    ConfigHeader header;
    ParamList<T> tensors;
};

template <typename T>
std::vector<unsigned char> encode_checkpoint(const ParamList<T>& tensors, const ConfigHeader& header = {});

template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<unsigned char>& bytes);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamList<T>& tensors,
                     const ConfigHeader& header = {});

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Reads only the header block; works for either value width.
ConfigHeader read_checkpoint_header(const std::filesystem::path& path);

/// Copies values into `into` by name; every destination must be present with identical shape.
template <typename T>
void assign_tensors(const ParamList<T>& from, ParamList<T>& into);

}  // namespace spiro
