#include "spiro/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

namespace spiro {

namespace {

constexpr char kMagic[] = "SPIRO1";
constexpr std::size_t kMagicLen = 6;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

class Reader {
   public:
    explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

    const unsigned char* take(std::size_t n, const char* what) {
        if (pos_ + n > bytes_.size()) {
            throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
        }
        const unsigned char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::uint32_t u32(const char* what) {
        const unsigned char* p = take(4, what);
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }

    bool done() const { return pos_ == bytes_.size(); }

   private:
    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

ConfigHeader parse_header(const std::string& text) {
    ConfigHeader header;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        if (!line.empty()) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw CheckpointError("checkpoint header line without '=': " + line);
            header.emplace_back(line.substr(0, eq), line.substr(eq + 1));
        }
        start = end + 1;
    }
    return header;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ConfigHeader read_prefix(Reader& r, std::uint8_t& width) {
    const unsigned char* magic = r.take(kMagicLen, "magic");
    if (std::memcmp(magic, kMagic, kMagicLen) != 0) throw CheckpointError("not a SPIRO1 checkpoint (bad magic)");
    width = *r.take(1, "value width");
    if (width != 4 && width != 8) throw CheckpointError("unsupported value width " + std::to_string(width));
    const std::uint32_t hlen = r.u32("header length");
    const unsigned char* h = r.take(hlen, "header");
    return parse_header(std::string(reinterpret_cast<const char*>(h), hlen));
}

}  // namespace

template <typename T>
std::vector<unsigned char> encode_checkpoint(const ParamList<T>& tensors, const ConfigHeader& header) {
    std::vector<unsigned char> out(kMagic, kMagic + kMagicLen);
    out.push_back(static_cast<unsigned char>(sizeof(T)));
    std::string text;
    for (const auto& [k, v] : header) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw CheckpointError("checkpoint header entry not representable: " + k);
        }
        text += k + "=" + v + "\n";
    }
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        const Shape s = t.tensor.shape();
        for (std::size_t d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
        const auto data = t.tensor.data();
        const auto* raw = reinterpret_cast<const unsigned char*>(data.data());
        out.insert(out.end(), raw, raw + data.size_bytes());
    }
    return out;
}

template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<unsigned char>& bytes) {
    Reader r(bytes);
    std::uint8_t width = 0;
    Checkpoint<T> ck;
    ck.header = read_prefix(r, width);
    if (width != sizeof(T)) {
        throw CheckpointError("checkpoint stores " + std::to_string(width * 8) + "-bit values, expected " +
                              std::to_string(sizeof(T) * 8) + "-bit");
    }
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t nlen = r.u32("name length");
        const unsigned char* name = r.take(nlen, "name");
        Shape s;
        s.n = r.u32("shape");
        s.c = r.u32("shape");
        s.h = r.u32("shape");
        s.w = r.u32("shape");
        std::vector<T> values(s.numel());
        const unsigned char* raw = r.take(values.size() * sizeof(T), "values");
        std::memcpy(values.data(), raw, values.size() * sizeof(T));
        ck.tensors.push_back({std::string(reinterpret_cast<const char*>(name), nlen), Tensor<T>(s, std::move(values))});
    }
    if (!r.done()) throw CheckpointError("trailing bytes after last tensor");
    return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamList<T>& tensors, const ConfigHeader& header) {
    const auto bytes = encode_checkpoint(tensors, header);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint<T>(read_file(path));
}

ConfigHeader read_checkpoint_header(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    Reader r(bytes);
    std::uint8_t width = 0;
    ConfigHeader h = read_prefix(r, width);
    h.emplace_back("__value_bytes", std::to_string(width));
    return h;
}

template <typename T>
void assign_tensors(const ParamList<T>& from, ParamList<T>& into) {
    std::unordered_map<std::string, const Tensor<T>*> index;
    for (const auto& t : from) index.emplace(t.name, &t.tensor);
    for (auto& dst : into) {
        auto it = index.find(dst.name);
        if (it == index.end()) throw CheckpointError("checkpoint lacks tensor '" + dst.name + "'");
        if (!(it->second->shape() == dst.tensor.shape())) {
            throw CheckpointError("tensor '" + dst.name + "' has shape " + it->second->shape().str() +
                                  ", expected " + dst.tensor.shape().str());
        }
        std::copy(it->second->data().begin(), it->second->data().end(), dst.tensor.data().begin());
    }
}

template std::vector<unsigned char> encode_checkpoint(const ParamList<float>&, const ConfigHeader&);
template std::vector<unsigned char> encode_checkpoint(const ParamList<double>&, const ConfigHeader&);
template Checkpoint<float> decode_checkpoint(const std::vector<unsigned char>&);
template Checkpoint<double> decode_checkpoint(const std::vector<unsigned char>&);
template void save_checkpoint(const std::filesystem::path&, const ParamList<float>&, const ConfigHeader&);
template void save_checkpoint(const std::filesystem::path&, const ParamList<double>&, const ConfigHeader&);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);
template void assign_tensors(const ParamList<float>&, ParamList<float>&);
template void assign_tensors(const ParamList<double>&, ParamList<double>&);

}  // namespace spiro
