#include "htlmine/checkpoint.hpp"

#include "htlmine/errors.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace htl {

namespace {

constexpr int kCheckpointVersion = 1;

static_assert(sizeof(double) == 8, "float64 checkpoint blob requires 8-byte double");

void write_doubles_le(std::ofstream & f, const std::vector<double> & v) {
    // x86/arm64 are little-endian; bail out loudly elsewhere
    uint16_t probe = 1;
    if (*reinterpret_cast<uint8_t *>(&probe) != 1) {
        throw io_error("checkpoint writer requires a little-endian host");
    }
    f.write(reinterpret_cast<const char *>(v.data()), std::streamsize(v.size() * 8));
}

} // namespace

void save_checkpoint(const std::filesystem::path & p, const model & m, const prune_mask * mask) {
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream f(p, std::ios::binary);
    if (!f) {
        throw io_error("cannot open " + p.string() + " for writing");
    }

    const auto & cfg = m.config();
    f << "htlmine-checkpoint\n";
    f << "version " << kCheckpointVersion << "\n";
    f << "kind " << arch_kind_name(m.kind()) << "\n";
    f << "depth " << cfg.depth << "\n";
    f << "base_channels " << cfg.base_channels << "\n";
    f << "input_channels " << cfg.input_channels << "\n";
    f << "num_seg_classes " << cfg.num_seg_classes << "\n";
    f << "num_cls_classes " << cfg.num_cls_classes << "\n";
    f << "params " << m.params().size() << "\n";
    int64_t offset = 0;
    for (const auto & slot : m.params()) {
        f << "param " << slot.name << " ";
        for (size_t i = 0; i < slot.value->shape.size(); ++i) {
            f << (i ? "," : "") << slot.value->shape[i];
        }
        f << " float64 " << offset << "\n";
        offset += slot.value->numel() * 8;
    }
    f << "blob_bytes " << offset << "\n";
    if (mask != nullptr) {
        int64_t mask_bits = 0;
        for (const auto & s : mask->slots) {
            mask_bits += int64_t(s.size());
        }
        char ratio_buf[32];
        std::snprintf(ratio_buf, sizeof(ratio_buf), "%.17g", mask->ratio);
        f << "mask present " << prune_method_name(mask->method) << " "
          << ratio_buf << " " << mask->seed << " " << mask_bits << "\n";
    } else {
        f << "mask absent\n";
    }
    f << "end\n";

    for (const auto & slot : m.params()) {
        write_doubles_le(f, slot.value->data);
    }
    if (mask != nullptr) {
        if (mask->slots.size() != m.params().size()) {
            throw dimension_error("mask slots do not match model parameters");
        }
        std::vector<uint8_t> packed;
        uint8_t cur = 0;
        int bit = 0;
        for (const auto & s : mask->slots) {
            for (uint8_t v : s) {
                if (v) {
                    cur |= uint8_t(1u << bit);
                }
                if (++bit == 8) {
                    packed.push_back(cur);
                    cur = 0;
                    bit = 0;
                }
            }
        }
        if (bit > 0) {
            packed.push_back(cur);
        }
        f.write(reinterpret_cast<const char *>(packed.data()), std::streamsize(packed.size()));
    }
    if (!f) {
        throw io_error("write failed for " + p.string());
    }
}

checkpoint_data load_checkpoint(const std::filesystem::path & p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) {
        throw io_error("cannot open checkpoint " + p.string());
    }
    std::string line;
    if (!std::getline(f, line) || line != "htlmine-checkpoint") {
        throw validation_error(p.string() + ": not an htlmine checkpoint");
    }

    int version = -1;
    arch_config cfg;
    std::string kind_name;
    size_t n_params = 0;
    struct entry {
        std::string name;
        std::vector<int64_t> shape;
        int64_t offset;
    };
    std::vector<entry> entries;
    bool mask_present = false;
    prune_mask stored_mask;
    int64_t mask_bits = 0;
    int64_t blob_bytes = -1;

    while (std::getline(f, line)) {
        if (line == "end") {
            break;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "version") {
            ls >> version;
        } else if (key == "kind") {
            ls >> kind_name;
        } else if (key == "depth") {
            ls >> cfg.depth;
        } else if (key == "base_channels") {
            ls >> cfg.base_channels;
        } else if (key == "input_channels") {
            ls >> cfg.input_channels;
        } else if (key == "num_seg_classes") {
            ls >> cfg.num_seg_classes;
        } else if (key == "num_cls_classes") {
            ls >> cfg.num_cls_classes;
        } else if (key == "params") {
            ls >> n_params;
        } else if (key == "param") {
            entry e;
            std::string shape_csv, dtype;
            ls >> e.name >> shape_csv >> dtype >> e.offset;
            if (dtype != "float64") {
                throw validation_error(p.string() + ": unsupported dtype " + dtype);
            }
            std::istringstream ss(shape_csv);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                e.shape.push_back(std::stoll(tok));
            }
            entries.push_back(std::move(e));
        } else if (key == "blob_bytes") {
            ls >> blob_bytes;
        } else if (key == "mask") {
            std::string state;
            ls >> state;
            if (state == "present") {
                mask_present = true;
                std::string method;
                ls >> method >> stored_mask.ratio >> stored_mask.seed >> mask_bits;
                stored_mask.method = prune_method_from_name(method);
            }
        } else {
            throw validation_error(p.string() + ": unknown manifest key " + key);
        }
    }
    if (version != kCheckpointVersion) {
        throw validation_error(p.string() + ": missing or unsupported version (" +
                               std::to_string(version) + ")");
    }
    if (entries.size() != n_params) {
        throw validation_error(p.string() + ": manifest lists " + std::to_string(entries.size()) +
                               " params, header says " + std::to_string(n_params));
    }

    model m = kind_name == "segmentation" ? build_unet(cfg) : build_classifier(cfg);
    if (m.params().size() != entries.size()) {
        throw validation_error(p.string() + ": parameter count mismatch with architecture");
    }

    for (size_t i = 0; i < entries.size(); ++i) {
        auto & slot = m.params()[i];
        if (slot.name != entries[i].name || slot.value->shape != entries[i].shape) {
            throw validation_error(p.string() + ": parameter " + entries[i].name +
                                   " does not match the architecture slot " + slot.name);
        }
        f.read(reinterpret_cast<char *>(slot.value->data.data()),
               std::streamsize(slot.value->numel() * 8));
        if (f.gcount() != std::streamsize(slot.value->numel() * 8)) {
            throw validation_error(p.string() + ": truncated parameter blob");
        }
    }

    std::optional<prune_mask> mask;
    if (mask_present) {
        std::vector<uint8_t> packed(size_t((mask_bits + 7) / 8));
        f.read(reinterpret_cast<char *>(packed.data()), std::streamsize(packed.size()));
        if (f.gcount() != std::streamsize(packed.size())) {
            throw validation_error(p.string() + ": truncated mask section");
        }
        stored_mask.slots.resize(m.params().size());
        int64_t bit = 0;
        for (size_t i = 0; i < m.params().size(); ++i) {
            if (!m.params()[i].prunable) {
                continue;
            }
            auto & s = stored_mask.slots[i];
            s.resize(size_t(m.params()[i].value->numel()));
            for (size_t j = 0; j < s.size(); ++j, ++bit) {
                s[j] = (packed[size_t(bit / 8)] >> (bit % 8)) & 1u;
            }
        }
        if (bit != mask_bits) {
            throw validation_error(p.string() + ": mask bit count mismatch");
        }
        mask = std::move(stored_mask);
    }
    return checkpoint_data(std::move(m), std::move(mask));
}

} // namespace htl
