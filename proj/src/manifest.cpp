#include "nighthaze/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "nighthaze/error.hpp"
#include "nighthaze/image_io.hpp"

namespace fs = std::filesystem;

namespace nighthaze {

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw DataError("unknown split '" + s + "'");
}

std::vector<ManifestRecord> DatasetManifest::subset(Split s) const {
    std::vector<ManifestRecord> out;
    std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
                 [s](const ManifestRecord& r) { return r.split == s; });
    return out;
}

std::size_t DatasetManifest::count(Split s) const {
    return static_cast<std::size_t>(std::count_if(
        samples.begin(), samples.end(), [s](const ManifestRecord& r) { return r.split == s; }));
}

void DatasetManifest::validate() const {
    std::set<fs::path> seen;
    for (const auto& r : samples) {
        if (paired && !r.clean) {
            throw DataError("paired manifest record without clean path: " + r.hazy.string());
        }
        if (!seen.insert(r.hazy.lexically_normal()).second) {
            throw DataError("record listed twice: " + r.hazy.string());
        }
    }
}

void DatasetManifest::validate_files() const {
    validate();
    if (!paired) return;
    for (const auto& r : samples) {
        const auto hazy = load_image(r.hazy);
        const auto clean = load_image(*r.clean);
        if (!hazy.same_size(clean)) {
            throw DataError("pair size mismatch: " + r.hazy.string());
        }
    }
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open manifest " + path.string());
    const fs::path base = fs::absolute(path).parent_path();
    auto resolve = [&](const std::string& p) {
        fs::path q(p);
        return (q.is_absolute() ? q : base / q).lexically_normal();
    };

    DatasetManifest m;
    m.paired = true;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) fields.push_back(f);
        if (fields.size() < 2 || fields.size() > 3) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 2 or 3 fields");
        }
        ManifestRecord r;
        r.split = parse_split(fields[0]);
        r.hazy = resolve(fields[1]);
        if (fields.size() == 3 && !fields[2].empty()) r.clean = resolve(fields[2]);
        if (!r.clean) m.paired = false;
        m.samples.push_back(std::move(r));
    }
    if (m.samples.empty()) m.paired = false;
    m.validate();
    return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    manifest.validate();
    const fs::path base = fs::absolute(path).parent_path().lexically_normal();
    auto rel = [&](const fs::path& p) {
        const fs::path abs = fs::absolute(p).lexically_normal();
        const fs::path r = abs.lexically_relative(base);
        if (r.empty() || *r.begin() == "..") return abs.generic_string();
        return r.generic_string();
    };
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const auto& r : manifest.samples) {
        out << to_string(r.split) << '\t' << rel(r.hazy);
        if (r.clean) out << '\t' << rel(*r.clean);
        out << '\n';
    }
    if (!out) throw IoError("write failed for manifest " + path.string());
}

DatasetManifest scan_dataset(const fs::path& root, Split split) {
    const fs::path hazy_dir = root / "hazy";
    const fs::path gt_dir = root / "gt";
    if (!fs::is_directory(hazy_dir)) throw NotFoundError("missing directory " + hazy_dir.string());

    std::map<std::string, fs::path> hazy;
    for (const auto& e : fs::directory_iterator(hazy_dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") hazy[e.path().stem().string()] = e.path();
    }
    const bool has_gt = fs::is_directory(gt_dir);
    DatasetManifest m;
    m.paired = has_gt && !hazy.empty();
    for (const auto& [stem, p] : hazy) {
        ManifestRecord r;
        r.split = split;
        r.hazy = fs::absolute(p).lexically_normal();
        if (has_gt) {
            const fs::path g = gt_dir / (stem + ".png");
            if (fs::exists(g)) {
                r.clean = fs::absolute(g).lexically_normal();
            } else {
                m.paired = false;
            }
        }
        m.samples.push_back(std::move(r));
    }
    return m;
}

SplitCounts split_counts(std::size_t n) {
    SplitCounts c;
    c.val = n / 10;
    c.test = n / 10;
    c.train = n - c.val - c.test;
    return c;
}

}  // namespace nighthaze
