#include "htlmine/dataset.hpp"

#include "htlmine/errors.hpp"
#include "htlmine/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace htl {

namespace fs = std::filesystem;
using nlohmann::json;

void gen_spec::validate() const {
    std::vector<std::string> bad;
    if (n_samples < 0) {
        bad.push_back("n_samples must be >= 0");
    }
    if (image_size < 4) {
        bad.push_back("image_size must be >= 4");
    }
    if (channels != 1 && channels != 3) {
        bad.push_back("channels must be 1 or 3");
    }
    if (subgroups.empty()) {
        bad.push_back("at least one subgroup required");
    }
    double share_sum = 0.0;
    for (size_t i = 0; i < subgroups.size(); ++i) {
        const auto & g = subgroups[i];
        const std::string tag = "subgroup[" + std::to_string(i) + "] ";
        share_sum += g.share;
        if (g.share < 0.0) {
            bad.push_back(tag + "share must be >= 0");
        }
        if (!(g.contrast_range[0] > 0.0 && g.contrast_range[1] <= 1.0 &&
              g.contrast_range[0] <= g.contrast_range[1])) {
            bad.push_back(tag + "contrast_range must satisfy 0 < lo <= hi <= 1");
        }
        if (!(g.size_range[0] > 0.0 && g.size_range[1] <= 0.5 &&
              g.size_range[0] <= g.size_range[1])) {
            bad.push_back(tag + "size_range must satisfy 0 < lo <= hi <= 0.5");
        }
        if (!(g.irregularity_range[0] >= 0.0 && g.irregularity_range[1] <= 0.95 &&
              g.irregularity_range[0] <= g.irregularity_range[1])) {
            bad.push_back(tag + "irregularity_range must satisfy 0 <= lo <= hi <= 0.95");
        }
    }
    if (!subgroups.empty() && std::abs(share_sum - 1.0) > 1e-9) {
        bad.push_back("subgroup shares must sum to 1.0, got " + std::to_string(share_sum));
    }
    if (!bad.empty()) {
        std::string msg = "invalid generation spec:";
        for (const auto & m : bad) {
            msg += " " + m + ";";
        }
        throw config_error(msg);
    }
}

namespace {

constexpr double kBackgroundBase = 0.30;
constexpr double kNoiseAmplitude = 0.08;

double quantize16(double v) {
    v = std::min(1.0, std::max(0.0, v));
    return std::round(v * 65535.0) / 65535.0;
}

std::string pick_categorical(const std::map<std::string, double> & dist, rng & r,
                             const std::string & fallback) {
    if (dist.empty()) {
        return fallback;
    }
    double total = 0.0;
    for (const auto & [_, p] : dist) {
        total += p;
    }
    double u = r.uniform() * total;
    for (const auto & [name, p] : dist) {
        u -= p;
        if (u < 0.0) {
            return name;
        }
    }
    return dist.rbegin()->first;
}

// Largest-remainder allocation of n items to weights.
std::vector<int> quota_counts(const std::vector<double> & weights, int n) {
    double total = 0.0;
    for (double w : weights) {
        total += w;
    }
    std::vector<int> counts(weights.size(), 0);
    std::vector<std::pair<double, size_t>> rema;
    int assigned = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
        const double q = total > 0.0 ? weights[i] / total * n : 0.0;
        counts[i] = int(std::floor(q));
        assigned += counts[i];
        rema.push_back({q - std::floor(q), i});
    }
    std::sort(rema.begin(), rema.end(), [](const auto & a, const auto & b) {
        if (a.first != b.first) {
            return a.first > b.first;
        }
        return a.second < b.second;
    });
    for (int i = 0; i < n - assigned; ++i) {
        counts[rema[size_t(i) % rema.size()].second] += 1;
    }
    return counts;
}

} // namespace

std::vector<sample> generate(const gen_spec & spec) {
    spec.validate();
    const int S = spec.image_size;

    // exact subgroup quotas, shuffled deterministically
    std::vector<double> shares;
    for (const auto & g : spec.subgroups) {
        shares.push_back(g.share);
    }
    const auto counts = quota_counts(shares, spec.n_samples);
    std::vector<int> assignment;
    for (size_t g = 0; g < counts.size(); ++g) {
        assignment.insert(assignment.end(), size_t(counts[g]), int(g));
    }
    rng shuffle_rng(derive_seed(spec.seed, 0x5f));
    shuffle_rng.shuffle(assignment);

    std::vector<sample> out;
    out.reserve(size_t(spec.n_samples));
    for (int i = 0; i < spec.n_samples; ++i) {
        const auto & g = spec.subgroups[size_t(assignment[size_t(i)])];
        rng r(derive_seed(spec.seed, uint64_t(i), 0xa1));

        sample s;
        {
            std::ostringstream id;
            id << "s" << std::setw(5) << std::setfill('0') << i;
            s.id = id.str();
        }
        s.channels = spec.channels;
        s.height = S;
        s.width = S;
        s.subgroup = g.name;
        s.class_label = g.class_label;
        s.demo.sex = pick_categorical(g.sex_distribution, r, "unknown");
        s.demo.age_group = pick_categorical(g.age_distribution, r, "unknown");

        const double contrast = r.uniform(g.contrast_range[0], g.contrast_range[1]);
        const double size_fraction = r.uniform(g.size_range[0], g.size_range[1]);
        const double irregularity = r.uniform(g.irregularity_range[0], g.irregularity_range[1]);

        const double r0 = std::sqrt(size_fraction * S * S / M_PI);
        const double r_max = r0 * (1.0 + irregularity);
        if (2.0 * r_max + 2.0 > double(S)) {
            throw config_error("infeasible geometry: size_fraction " +
                               std::to_string(size_fraction) + " with irregularity " +
                               std::to_string(irregularity) + " does not fit a " +
                               std::to_string(S) + "px image");
        }

        // star-convex radius: r(theta) = r0 * (1 + irregularity * s(theta)),
        // s a unit-bounded sum of low harmonics
        std::array<double, 3> amp{}, phase{};
        double amp_sum = 0.0;
        for (size_t h = 0; h < 3; ++h) {
            amp[h] = r.uniform();
            phase[h] = r.uniform(0.0, 2.0 * M_PI);
            amp_sum += amp[h];
        }
        if (amp_sum > 0.0) {
            for (auto & a : amp) {
                a /= amp_sum;
            }
        }
        const double cx = r.uniform(r_max + 1.0, S - r_max - 1.0);
        const double cy = r.uniform(r_max + 1.0, S - r_max - 1.0);

        auto radius_at = [&](double theta) {
            double sfun = 0.0;
            for (size_t h = 0; h < 3; ++h) {
                sfun += amp[h] * std::cos(double(h + 2) * theta + phase[h]);
            }
            return r0 * (1.0 + irregularity * sfun);
        };

        std::vector<uint8_t> mask(size_t(S) * S, 0);
        int64_t area = 0;
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                const double dx = double(x) - cx;
                const double dy = double(y) - cy;
                const double rho = std::hypot(dx, dy);
                const double theta = std::atan2(dy, dx);
                if (rho <= radius_at(theta)) {
                    mask[size_t(y) * S + x] = 1;
                    ++area;
                }
            }
        }

        s.image.resize(size_t(spec.channels) * S * S);
        for (int c = 0; c < spec.channels; ++c) {
            for (int p = 0; p < S * S; ++p) {
                const double noise = r.uniform(-kNoiseAmplitude, kNoiseAmplitude);
                const double v = kBackgroundBase + noise + (mask[size_t(p)] ? contrast : 0.0);
                s.image[size_t(c) * S * S + p] = quantize16(v);
            }
        }
        s.mask = std::move(mask);
        s.difficulty = difficulty_factors{contrast, double(area) / double(S * S), irregularity};
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// netpbm I/O (16-bit samples are big-endian per the format)

namespace {

void write_pnm16(const fs::path & p, const std::vector<double> & values, int height, int width,
                 int channels) {
    std::ofstream f(p, std::ios::binary);
    if (!f) {
        throw io_error("cannot open " + p.string() + " for writing");
    }
    f << (channels == 1 ? "P5" : "P6") << "\n" << width << " " << height << "\n65535\n";
    const int64_t plane = int64_t(height) * width;
    std::vector<unsigned char> buf(size_t(plane) * channels * 2);
    for (int64_t i = 0; i < plane; ++i) {
        for (int c = 0; c < channels; ++c) {
            const double v = values[size_t(c) * plane + i];   // CHW -> interleaved
            const int q = int(std::lround(std::min(1.0, std::max(0.0, v)) * 65535.0));
            buf[size_t(i * channels + c) * 2] = (unsigned char) (q >> 8);
            buf[size_t(i * channels + c) * 2 + 1] = (unsigned char) (q & 0xff);
        }
    }
    f.write(reinterpret_cast<const char *>(buf.data()), std::streamsize(buf.size()));
    if (!f) {
        throw io_error("write failed for " + p.string());
    }
}

struct pnm_image {
    int channels = 1;
    int height = 0;
    int width = 0;
    std::vector<double> values;   // CHW
};

pnm_image read_pnm(const fs::path & p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) {
        throw io_error("cannot open " + p.string());
    }
    std::string magic;
    f >> magic;
    if (magic != "P5" && magic != "P6") {
        throw validation_error(p.string() + ": unsupported format " + magic);
    }
    auto next_int = [&]() {
        // skips whitespace and '#' comments
        while (true) {
            int ch = f.peek();
            if (ch == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(ch)) {
                f.get();
            } else {
                break;
            }
        }
        int v = 0;
        f >> v;
        return v;
    };
    pnm_image img;
    img.channels = magic == "P5" ? 1 : 3;
    img.width = next_int();
    img.height = next_int();
    const int maxval = next_int();
    if (img.width <= 0 || img.height <= 0 || (maxval != 255 && maxval != 65535)) {
        throw validation_error(p.string() + ": bad header");
    }
    f.get();   // single whitespace before raster
    const int64_t plane = int64_t(img.height) * img.width;
    const int bytes_per = maxval == 255 ? 1 : 2;
    std::vector<unsigned char> buf(size_t(plane) * img.channels * bytes_per);
    f.read(reinterpret_cast<char *>(buf.data()), std::streamsize(buf.size()));
    if (f.gcount() != std::streamsize(buf.size())) {
        throw validation_error(p.string() + ": truncated raster");
    }
    img.values.resize(size_t(plane) * img.channels);
    for (int64_t i = 0; i < plane; ++i) {
        for (int c = 0; c < img.channels; ++c) {
            int q;
            if (bytes_per == 1) {
                q = buf[size_t(i * img.channels + c)];
            } else {
                q = (buf[size_t(i * img.channels + c) * 2] << 8) |
                    buf[size_t(i * img.channels + c) * 2 + 1];
            }
            img.values[size_t(c) * plane + i] = double(q) / double(maxval);
        }
    }
    return img;
}

} // namespace

std::vector<uint8_t> load_mask_pgm(const fs::path & p, int expected_h, int expected_w) {
    auto img = read_pnm(p);
    if (img.channels != 1 || img.height != expected_h || img.width != expected_w) {
        throw validation_error("mask " + p.string() + " does not match expected size " +
                               std::to_string(expected_h) + "x" + std::to_string(expected_w));
    }
    std::vector<uint8_t> m(img.values.size());
    for (size_t i = 0; i < m.size(); ++i) {
        m[i] = img.values[i] >= 0.5 ? 1 : 0;
    }
    return m;
}

void write_pgm16(const fs::path & p, const std::vector<double> & values, int height, int width) {
    write_pnm16(p, values, height, width, 1);
}

void write_ppm16(const fs::path & p, const std::vector<double> & values, int height, int width) {
    write_pnm16(p, values, height, width, 3);
}

void write_pgm8(const fs::path & p, const std::vector<uint8_t> & values, int height, int width) {
    std::ofstream f(p, std::ios::binary);
    if (!f) {
        throw io_error("cannot open " + p.string() + " for writing");
    }
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char *>(values.data()), std::streamsize(values.size()));
    if (!f) {
        throw io_error("write failed for " + p.string());
    }
}

void save_directory(const std::vector<sample> & samples, const fs::path & dir) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    std::ofstream meta(dir / "metadata.jsonl");
    if (!meta) {
        throw io_error("cannot open " + (dir / "metadata.jsonl").string());
    }
    for (const auto & s : samples) {
        if (s.channels == 1) {
            write_pgm16(dir / "images" / (s.id + ".pgm"), s.image, s.height, s.width);
        } else {
            write_ppm16(dir / "images" / (s.id + ".ppm"), s.image, s.height, s.width);
        }
        if (s.mask) {
            std::vector<uint8_t> m255(s.mask->size());
            for (size_t i = 0; i < m255.size(); ++i) {
                m255[i] = (*s.mask)[i] ? 255 : 0;
            }
            write_pgm8(dir / "masks" / (s.id + ".pgm"), m255, s.height, s.width);
        }
        json j;
        j["id"] = s.id;
        if (s.class_label) {
            j["class_label"] = *s.class_label;
        }
        if (s.demo.sex != "unknown") {
            j["sex"] = s.demo.sex;
        }
        if (s.demo.age_group != "unknown") {
            j["age_group"] = s.demo.age_group;
        }
        if (s.subgroup) {
            j["subgroup"] = *s.subgroup;
        }
        if (s.difficulty) {
            j["difficulty_factors"] = {{"contrast", s.difficulty->contrast},
                                       {"size_fraction", s.difficulty->size_fraction},
                                       {"irregularity", s.difficulty->irregularity}};
        }
        meta << j.dump() << "\n";
    }
}

std::vector<sample> load_directory(const fs::path & dir) {
    std::vector<sample> out;
    if (!fs::exists(dir)) {
        throw io_error("corpus directory does not exist: " + dir.string());
    }

    std::vector<json> records;
    const fs::path meta_path = dir / "metadata.jsonl";
    if (fs::exists(meta_path)) {
        std::ifstream meta(meta_path);
        std::string line;
        int line_no = 0;
        while (std::getline(meta, line)) {
            ++line_no;
            if (line.empty()) {
                continue;
            }
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object() || !j.contains("id")) {
                throw validation_error(meta_path.string() + ": malformed metadata at line " +
                                       std::to_string(line_no));
            }
            records.push_back(std::move(j));
        }
    } else if (fs::exists(dir / "images")) {
        std::vector<std::string> ids;
        for (const auto & e : fs::directory_iterator(dir / "images")) {
            ids.push_back(e.path().stem().string());
        }
        std::sort(ids.begin(), ids.end());
        for (const auto & id : ids) {
            records.push_back(json{{"id", id}});
        }
    }

    for (const auto & j : records) {
        sample s;
        s.id = j.at("id").get<std::string>();
        fs::path img = dir / "images" / (s.id + ".pgm");
        if (!fs::exists(img)) {
            img = dir / "images" / (s.id + ".ppm");
        }
        if (!fs::exists(img)) {
            throw validation_error("no image file for id " + s.id + " under " +
                                   (dir / "images").string());
        }
        auto im = read_pnm(img);
        s.channels = im.channels;
        s.height = im.height;
        s.width = im.width;
        s.image = std::move(im.values);

        const fs::path mp = dir / "masks" / (s.id + ".pgm");
        if (fs::exists(mp)) {
            auto mi = read_pnm(mp);
            if (mi.height != s.height || mi.width != s.width) {
                throw validation_error("mask size mismatch for " + mp.string() + ": image is " +
                                       std::to_string(s.height) + "x" + std::to_string(s.width) +
                                       ", mask is " + std::to_string(mi.height) + "x" +
                                       std::to_string(mi.width));
            }
            std::vector<uint8_t> m(mi.values.size());
            for (size_t i = 0; i < m.size(); ++i) {
                m[i] = mi.values[i] >= 0.5 ? 1 : 0;
            }
            s.mask = std::move(m);
        }

        if (j.contains("class_label")) {
            s.class_label = j.at("class_label").get<int>();
        }
        if (j.contains("sex")) {
            s.demo.sex = j.at("sex").get<std::string>();
        }
        if (j.contains("age_group")) {
            s.demo.age_group = j.at("age_group").get<std::string>();
        }
        if (j.contains("subgroup")) {
            s.subgroup = j.at("subgroup").get<std::string>();
        }
        if (j.contains("difficulty_factors")) {
            const auto & d = j.at("difficulty_factors");
            s.difficulty = difficulty_factors{d.value("contrast", 0.0),
                                              d.value("size_fraction", 0.0),
                                              d.value("irregularity", 0.0)};
        }
        out.push_back(std::move(s));
    }
    return out;
}

split_result split(const std::vector<sample> & samples, std::array<double, 3> fractions,
                   uint64_t seed) {
    double fsum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) {
            throw config_error("split fractions must be >= 0");
        }
        fsum += f;
    }
    if (fsum > 1.0 + 1e-9) {
        throw config_error("split fractions must sum to <= 1");
    }

    // strata in first-appearance order, deterministic
    std::map<std::string, std::vector<size_t>> strata;
    for (size_t i = 0; i < samples.size(); ++i) {
        strata[samples[i].subgroup.value_or("")].push_back(i);
    }

    std::vector<int> dest(samples.size(), -1);
    for (auto & [name, idx] : strata) {
        rng r(derive_seed(seed, std::hash<std::string>{}(name), 0x3b));
        r.shuffle(idx);
        const int n = int(idx.size());
        const auto counts = quota_counts({fractions[0], fractions[1], fractions[2], 1.0 - fsum},
                                         n);
        size_t k = 0;
        for (int part = 0; part < 3; ++part) {
            for (int c = 0; c < counts[size_t(part)]; ++c) {
                dest[idx[k++]] = part;
            }
        }
    }

    split_result res;
    for (size_t i = 0; i < samples.size(); ++i) {
        switch (dest[i]) {
            case 0: res.train.push_back(samples[i]); break;
            case 1: res.val.push_back(samples[i]); break;
            case 2: res.test.push_back(samples[i]); break;
            default: break;   // unassigned remainder
        }
    }
    return res;
}

tensor_ptr batch_images(const std::vector<sample> & samples, const std::vector<size_t> & idx) {
    if (idx.empty()) {
        throw validation_error("batch_images requires at least one sample");
    }
    const auto & first = samples.at(idx[0]);
    auto t = make_tensor({int64_t(idx.size()), first.channels, first.height, first.width});
    const int64_t plane = int64_t(first.channels) * first.height * first.width;
    for (size_t b = 0; b < idx.size(); ++b) {
        const auto & s = samples.at(idx[b]);
        if (s.channels != first.channels || s.height != first.height || s.width != first.width) {
            throw dimension_error("batch contains mixed image sizes (sample " + s.id + ")");
        }
        std::copy(s.image.begin(), s.image.end(), t->data.begin() + int64_t(b) * plane);
    }
    return t;
}

tensor_ptr batch_mask_targets(const std::vector<sample> & samples, const std::vector<size_t> & idx) {
    if (idx.empty()) {
        throw validation_error("batch_mask_targets requires at least one sample");
    }
    const auto & first = samples.at(idx[0]);
    auto t = make_tensor({int64_t(idx.size()), first.height, first.width});
    const int64_t plane = int64_t(first.height) * first.width;
    for (size_t b = 0; b < idx.size(); ++b) {
        const auto & s = samples.at(idx[b]);
        if (!s.mask) {
            throw validation_error("sample " + s.id + " has no mask");
        }
        for (int64_t i = 0; i < plane; ++i) {
            t->data[size_t(int64_t(b) * plane + i)] = double((*s.mask)[size_t(i)]);
        }
    }
    return t;
}

} // namespace htl
