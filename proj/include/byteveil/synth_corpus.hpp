#ifndef BYTEVEIL_SYNTH_CORPUS_HPP
#define BYTEVEIL_SYNTH_CORPUS_HPP

#include "byteveil/malconv.hpp"
#include "byteveil/pe_format.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace byteveil {

enum class MotifRegion { Early, Uniform };

std::string_view to_string(MotifRegion region);
MotifRegion parse_motif_region(std::string_view text);

std::vector<std::uint8_t> default_motif();

/// Recipe for a labelled corpus of minimal, structurally valid PE files.
/// Malware files carry `motif` (once or twice); benign files never do.
/// Section data is assembled from chunks whose mix depends on the class:
/// both classes share code-like and zero chunks, benign files add
/// printable text and malware files add high-entropy (packed-looking) data.
struct CorpusSpec {
    std::size_t n_malware = 100;
    std::size_t n_benign = 100;
    std::size_t min_len = 1024;
    std::size_t max_len = 12288;
    std::vector<std::uint8_t> motif = default_motif();
    MotifRegion motif_region = MotifRegion::Early;
    std::uint64_t seed = 1;

    void validate() const;
};

struct ManifestEntry {
    std::string file;
    Label label = Label::Benign;
    std::size_t length = 0;
    std::uint64_t seed = 0;

    bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
    std::filesystem::path root;  // directory holding the files; not serialised
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> entries;

    std::filesystem::path path_of(const ManifestEntry& entry) const { return root / entry.file; }
};

inline constexpr std::size_t kSkeletonHeaderSize = 0x200;
inline constexpr std::size_t kMaxSkeletonSections = 3;

/// DOS header + stub, PE signature, COFF and PE32 optional header, and a
/// section table splitting [0x200, length) into `n_sections` sections.
/// Section bytes are zero.
RawBinary make_pe_skeleton(std::size_t length, std::size_t n_sections = 1,
                           std::uint32_t timestamp = 0);

/// Sample `index` of class `label`; depends only on (spec, label, index).
RawBinary generate_sample(const CorpusSpec& spec, Label label, std::size_t index);

/// Writes every sample plus manifest.json into `out_dir`.
Manifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

std::optional<std::size_t> find_motif(std::span<const std::uint8_t> bytes,
                                      std::span<const std::uint8_t> motif);

void save_manifest(const Manifest& manifest, const std::filesystem::path& dir);
Manifest load_manifest(const std::filesystem::path& dir);

} // namespace byteveil

#endif
