#include "checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "error.hpp"

namespace rlab::model {

namespace {

template <typename T>
void put(std::vector<char>& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
  public:
    explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        char buf[sizeof(T)];
        std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, buf, sizeof(T));
        return value;
    }

    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    bool done() const noexcept { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n, const char* what) {
        require(n <= bytes_.size() - pos_, ErrorKind::Format,
                std::string("checkpoint truncated while reading ") + what + " at byte offset " +
                    std::to_string(pos_));
    }

    const std::vector<char>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_checkpoint(const ReplayModel& model) {
    nlohmann::json meta{{"network", to_json(model.config())},
                        {"seen_classes", model.prior().seen_classes}};
    const std::string json = meta.dump();
    std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, json.size());
    out.insert(out.end(), json.begin(), json.end());
    const auto params = model.named_parameters();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor->shape.size()));
        for (auto extent : p.tensor->shape) put<std::uint64_t>(out, extent);
        for (double v : p.tensor->data) put<double>(out, v);
    }
    return out;
}

CheckpointContents decode_checkpoint(const std::vector<char>& bytes) {
    Reader r(bytes);
    const std::string magic = r.str(4, "magic");
    require(magic == std::string(kCheckpointMagic, 4), ErrorKind::Format,
            "bad checkpoint magic at byte offset 0");
    CheckpointContents c;
    c.version = r.get<std::uint32_t>("version");
    require(c.version == kCheckpointVersion, ErrorKind::Format,
            "unsupported checkpoint version " + std::to_string(c.version));
    const auto json_len = r.get<std::uint64_t>("config length");
    c.config_json = r.str(json_len, "config");
    const auto count = r.get<std::uint32_t>("group count");
    for (std::uint32_t g = 0; g < count; ++g) {
        ParameterGroup group;
        const auto name_len = r.get<std::uint32_t>("group name length");
        group.name = r.str(name_len, "group name");
        const auto rank = r.get<std::uint32_t>("rank");
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            group.shape.push_back(r.get<std::uint64_t>("extent"));
            n *= group.shape.back();
        }
        require(n <= r.remaining() / sizeof(double), ErrorKind::Format,
                "checkpoint group " + group.name + " truncated at byte offset " +
                    std::to_string(r.offset()));
        group.data.reserve(n);
        for (std::size_t i = 0; i < n; ++i) group.data.push_back(r.get<double>("parameter data"));
        c.groups.push_back(std::move(group));
    }
    require(r.done(), ErrorKind::Format,
            "trailing bytes after checkpoint at byte offset " + std::to_string(r.offset()));
    return c;
}

void save_checkpoint(const ReplayModel& model, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "failed writing checkpoint " + path.string());
}

CheckpointContents read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

ReplayModel model_from_checkpoint(const CheckpointContents& contents) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(contents.config_json);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    ReplayModel model(network_config_from_json(meta.at("network")));
    std::map<std::string, const ParameterGroup*> by_name;
    for (const auto& g : contents.groups) by_name[g.name] = &g;
    for (auto& p : model.named_parameters()) {
        auto it = by_name.find(p.name);
        require(it != by_name.end(), ErrorKind::Format, "checkpoint lacks group " + p.name);
        require(it->second->shape == p.tensor->shape, ErrorKind::Format,
                "checkpoint group " + p.name + " has shape " +
                    ad::shape_to_string(it->second->shape) + ", expected " +
                    p.tensor->shape_string());
        p.tensor->data = it->second->data;
    }
    const auto seen = meta.at("seen_classes").get<std::vector<int>>();
    model.prior().add_seen(seen);
    return model;
}

ReplayModel load_checkpoint(const std::filesystem::path& path) {
    return model_from_checkpoint(read_checkpoint(path));
}

}  // namespace rlab::model
