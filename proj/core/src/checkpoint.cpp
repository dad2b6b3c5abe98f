#include "hlora/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace hlora {

namespace {

constexpr const char* kFormatTag = "HLORA-CKPT v1";

void write_f32_le(std::ostream& out, double v) {
    const uint32_t bits = std::bit_cast<uint32_t>(static_cast<float>(v));
    const char bytes[4] = {
        static_cast<char>(bits & 0xff),
        static_cast<char>((bits >> 8) & 0xff),
        static_cast<char>((bits >> 16) & 0xff),
        static_cast<char>((bits >> 24) & 0xff),
    };
    out.write(bytes, 4);
}

double read_f32_le(std::istream& in, const std::string& path) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) throw IoError("truncated checkpoint payload in '" + path + "'");
    const uint32_t bits = static_cast<uint32_t>(bytes[0]) |
                          (static_cast<uint32_t>(bytes[1]) << 8) |
                          (static_cast<uint32_t>(bytes[2]) << 16) |
                          (static_cast<uint32_t>(bytes[3]) << 24);
    return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

void save_checkpoint(const std::string& path, const UnifiedModel& model,
                     const std::string& stage, uint64_t config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint '" + path + "' for writing");
    const auto params = model.named_parameters();
    out << kFormatTag << "\n";
    out << "stage " << stage << "\n";
    out << "config_hash " << std::hex << config_hash << std::dec << "\n";
    out << "mode " << (model.mode() == AdapterMode::task_gated ? "task_gated" : "shared_lora")
        << "\n";
    out << "entries " << params.size() << "\n";
    for (const NamedParam& np : params) {
        out << np.name << " " << np.tensor.shape().size();
        for (int d : np.tensor.shape()) out << " " << d;
        out << "\n";
    }
    out << "DATA\n";
    for (const NamedParam& np : params) {
        for (double v : np.tensor.data()) write_f32_le(out, v);
    }
    if (!out) throw IoError("write failed for checkpoint '" + path + "'");
}

namespace {

struct Header {
    CheckpointInfo info;
    std::vector<std::pair<std::string, Shape>> entries;
    std::streampos payload_start;
};

Header read_header(std::ifstream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line) || line != kFormatTag) {
        throw IoError("'" + path + "' is not a checkpoint (bad format tag)");
    }
    Header h;
    std::string word;
    in >> word;
    if (word != "stage") throw IoError("checkpoint '" + path + "' missing stage line");
    in >> h.info.stage;
    in >> word;
    if (word != "config_hash") throw IoError("checkpoint '" + path + "' missing config hash");
    in >> std::hex >> h.info.config_hash >> std::dec;
    in >> word;
    if (word != "mode") throw IoError("checkpoint '" + path + "' missing mode");
    std::string mode_s;
    in >> mode_s;
    if (mode_s == "task_gated") {
        h.info.mode = AdapterMode::task_gated;
    } else if (mode_s == "shared_lora") {
        h.info.mode = AdapterMode::shared_lora;
    } else {
        throw IoError("checkpoint '" + path + "' has unknown mode '" + mode_s + "'");
    }
    in >> word;
    if (word != "entries") throw IoError("checkpoint '" + path + "' missing entry count");
    std::size_t count = 0;
    in >> count;
    for (std::size_t i = 0; i < count; ++i) {
        std::string name;
        int ndims = 0;
        in >> name >> ndims;
        if (!in || ndims < 1 || ndims > 4) {
            throw IoError("bad manifest entry in checkpoint '" + path + "'");
        }
        Shape shape(ndims);
        for (int& d : shape) in >> d;
        h.entries.emplace_back(std::move(name), std::move(shape));
    }
    std::getline(in, line);  // rest of the last manifest line
    if (!std::getline(in, line) || line != "DATA") {
        throw IoError("checkpoint '" + path + "' missing DATA marker");
    }
    h.payload_start = in.tellg();
    return h;
}

}  // namespace

CheckpointInfo peek_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    return read_header(in, path).info;
}

CheckpointInfo load_checkpoint(const std::string& path, UnifiedModel& model,
                               uint64_t expected_hash, bool force) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    Header h = read_header(in, path);
    if (h.info.mode != model.mode()) {
        throw ConfigError("checkpoint '" + path + "' was written for a different adapter mode");
    }
    if (!force && h.info.config_hash != expected_hash) {
        std::ostringstream os;
        os << "checkpoint '" << path << "' config hash " << std::hex << h.info.config_hash
           << " does not match the active config " << expected_hash
           << " (pass --force to override)";
        throw ConfigError(os.str());
    }

    auto params = model.named_parameters();
    if (params.size() != h.entries.size()) {
        throw ConfigError("checkpoint '" + path + "' holds " + std::to_string(h.entries.size()) +
                          " entries, model expects " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != h.entries[i].first) {
            throw ConfigError("checkpoint entry '" + h.entries[i].first +
                              "' does not match model parameter '" + params[i].name + "'");
        }
        if (params[i].tensor.shape() != h.entries[i].second) {
            throw ConfigError("checkpoint entry '" + h.entries[i].first + "' has shape " +
                              shape_str(h.entries[i].second) + ", model expects " +
                              shape_str(params[i].tensor.shape()));
        }
    }
    for (NamedParam& np : params) {
        for (double& v : np.tensor.data_mut()) v = read_f32_le(in, path);
    }
    return h.info;
}

}  // namespace hlora
