#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nighthaze {

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestRecord {
    Split split = Split::Train;
    std::filesystem::path hazy;
    std::optional<std::filesystem::path> clean;

    bool operator==(const ManifestRecord&) const = default;
};

/// Sample listing for a dataset root. Serialized one record per line as
/// `split<TAB>hazy_path[<TAB>clean_path]`; relative paths resolve against the
/// manifest's directory.
struct DatasetManifest {
    std::vector<ManifestRecord> samples;
    bool paired = false;

    std::vector<ManifestRecord> subset(Split s) const;
    std::size_t count(Split s) const;

    /// Throws DataError when a paired manifest lacks clean paths, or when a
    /// hazy path occurs twice (a record may not sit in two splits).
    void validate() const;
    /// As validate(), and additionally decodes every pair to check sizes.
    void validate_files() const;

    bool operator==(const DatasetManifest&) const = default;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Builds a manifest from `<root>/hazy/*.png` (and `<root>/gt/*.png` when
/// present, matched by file stem). Every record is assigned `split`.
DatasetManifest scan_dataset(const std::filesystem::path& root, Split split = Split::Train);

struct SplitCounts {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
};

/// 80/10/10 partition: val and test get floor(n/10) each, train the rest.
SplitCounts split_counts(std::size_t n);

}  // namespace nighthaze
