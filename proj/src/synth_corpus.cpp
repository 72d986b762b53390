#include "byteveil/synth_corpus.hpp"

#include "byteveil/error.hpp"
#include "byteveil/seeding.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <random>

namespace byteveil {

namespace {

constexpr std::uint32_t kLfanew = 0x80;
constexpr std::size_t kOptionalHeaderSize = 0xE0;
constexpr std::size_t kSectionTable = kLfanew + 4 + pe::kCoffHeaderSize + kOptionalHeaderSize;
constexpr std::size_t kStubStart = pe::kDosHeaderSize;

constexpr std::array<std::uint8_t, 14> kDosStubCode = {0x0E, 0x1F, 0xBA, 0x0E, 0x00, 0xB4, 0x09,
                                                      0xCD, 0x21, 0xB8, 0x01, 0x4C, 0xCD, 0x21};
constexpr char kDosStubText[] = "This program cannot be run in DOS mode.\r\r\n$";

// Frequent x86 opcode and ModRM bytes; code-like chunks draw from these.
constexpr std::array<std::uint8_t, 40> kCodeBytes = {
    0x55, 0x8B, 0xEC, 0x83, 0xEC, 0x8B, 0x45, 0x08, 0x89, 0x45, 0xFC, 0x50, 0x51, 0x52,
    0x53, 0x56, 0x57, 0xE8, 0xFF, 0x15, 0x6A, 0x00, 0x74, 0x75, 0xEB, 0x33, 0xC0, 0x85,
    0xC9, 0x0F, 0x84, 0x5D, 0xC3, 0x5E, 0x5F, 0x5B, 0xC2, 0x04, 0x8D, 0x4D};

constexpr std::array<const char*, 24> kWords = {
    "the",      "file",    "version", "copyright", "microsoft", "windows", "program", "data",
    "settings", "user",    "open",    "close",     "license",   "library", "system",  "error",
    "message",  "default", "install", "product",   "company",   "update",  "resource", "string"};

enum class Chunk { Code, Text, Packed, Zero };

void put_u16(std::vector<std::uint8_t>& b, std::size_t off, std::uint16_t v)
{
    b[off] = static_cast<std::uint8_t>(v & 0xFF);
    b[off + 1] = static_cast<std::uint8_t>(v >> 8);
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t off, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        b[off + i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF);
}

std::uint32_t align_up(std::uint32_t v, std::uint32_t a)
{
    return (v + a - 1) / a * a;
}

Chunk draw_chunk(Label label, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = u(rng);
    if (r < 0.2)
        return Chunk::Code;
    if (r < 0.8)
        return label == Label::Benign ? Chunk::Text : Chunk::Packed;
    return Chunk::Zero;
}

void fill_chunk(std::span<std::uint8_t> out, Chunk kind, std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> any(0, 255);
    switch (kind) {
    case Chunk::Zero: std::fill(out.begin(), out.end(), 0); break;
    case Chunk::Packed:
        for (auto& b : out)
            b = static_cast<std::uint8_t>(any(rng));
        break;
    case Chunk::Code: {
        std::uniform_int_distribution<std::size_t> pick(0, kCodeBytes.size() - 1);
        std::uniform_int_distribution<int> noise(0, 49);
        for (auto& b : out)
            b = noise(rng) == 0 ? static_cast<std::uint8_t>(any(rng)) : kCodeBytes[pick(rng)];
        break;
    }
    case Chunk::Text: {
        std::uniform_int_distribution<std::size_t> pick(0, kWords.size() - 1);
        std::uniform_int_distribution<int> sep(0, 7);
        std::size_t i = 0;
        while (i < out.size()) {
            for (const char* c = kWords[pick(rng)]; *c && i < out.size(); ++c)
                out[i++] = static_cast<std::uint8_t>(*c);
            if (i < out.size())
                out[i++] = sep(rng) == 0 ? 0 : static_cast<std::uint8_t>(' ');
        }
        break;
    }
    }
}

void fill_sections(std::vector<std::uint8_t>& bytes, Label label, std::mt19937_64& rng)
{
    std::uniform_int_distribution<std::size_t> chunk_len(64, 512);
    struct Planned {
        std::size_t pos, len;
        Chunk kind;
    };
    std::vector<Planned> plan;
    for (std::size_t pos = kSkeletonHeaderSize; pos < bytes.size();) {
        const std::size_t n = std::min(chunk_len(rng), bytes.size() - pos);
        plan.push_back({pos, n, draw_chunk(label, rng)});
        pos += n;
    }
    // Every file carries at least one chunk typical of its class; the longest one is converted.
    const Chunk typical = label == Label::Benign ? Chunk::Text : Chunk::Packed;
    if (!plan.empty() && std::none_of(plan.begin(), plan.end(),
                                      [&](const Planned& c) { return c.kind == typical; })) {
        std::max_element(plan.begin(), plan.end(), [](const Planned& a, const Planned& b) {
            return a.len < b.len;
        })->kind = typical;
    }
    for (const auto& c : plan)
        fill_chunk(std::span<std::uint8_t>(bytes).subspan(c.pos, c.len), c.kind, rng);
}

std::vector<std::size_t> motif_offsets(std::size_t length, std::size_t n_sections,
                                       std::size_t motif_len, MotifRegion region)
{
    std::vector<std::size_t> out;
    const std::size_t header_end = kSectionTable + n_sections * pe::kSectionEntrySize;
    const auto add_range = [&](std::size_t lo, std::size_t hi_exclusive_end) {
        // start offsets s with s + motif_len <= hi_exclusive_end
        for (std::size_t s = lo; s + motif_len <= hi_exclusive_end; ++s)
            out.push_back(s);
    };
    add_range(kStubStart, kLfanew);
    add_range(header_end, kSkeletonHeaderSize);
    add_range(kSkeletonHeaderSize, length);
    if (region == MotifRegion::Early) {
        // start strictly below 10% of the file length
        std::erase_if(out, [&](std::size_t s) { return s * 10 >= length; });
    }
    return out;
}

std::size_t draw_length(const CorpusSpec& spec, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(std::log(static_cast<double>(spec.min_len)),
                                             std::log(static_cast<double>(spec.max_len) + 1.0));
    const auto len = static_cast<std::size_t>(std::floor(std::exp(u(rng))));
    return std::clamp(len, spec.min_len, spec.max_len);
}

} // namespace

std::string_view to_string(MotifRegion region)
{
    return region == MotifRegion::Early ? "early" : "uniform";
}

MotifRegion parse_motif_region(std::string_view text)
{
    if (text == "early")
        return MotifRegion::Early;
    if (text == "uniform")
        return MotifRegion::Uniform;
    throw Error(ErrorCode::InvalidConfig, "unknown motif region '" + std::string(text) + "'");
}

std::vector<std::uint8_t> default_motif()
{
    return {0x4D, 0x41, 0x4C, 0x21, 0xDE, 0xAD, 0xBE, 0xEF,
            0x13, 0x37, 0xC0, 0xDE, 0x66, 0x0F, 0x3A, 0xCC};
}

void CorpusSpec::validate() const
{
    if (min_len < kSkeletonHeaderSize)
        throw Error(ErrorCode::InvalidConfig, "min_len must hold the 512-byte PE skeleton");
    if (max_len < min_len)
        throw Error(ErrorCode::InvalidConfig, "max_len must be at least min_len");
    if (motif.empty() || motif.size() >= min_len)
        throw Error(ErrorCode::InvalidConfig, "motif must be non-empty and shorter than min_len");
    if (motif_offsets(min_len, 1, motif.size(), motif_region).empty())
        throw Error(ErrorCode::InvalidConfig,
                    "no room for the motif in the requested region at min_len");
}

RawBinary make_pe_skeleton(std::size_t length, std::size_t n_sections, std::uint32_t timestamp)
{
    if (length < kSkeletonHeaderSize)
        throw Error(ErrorCode::InvalidConfig, "skeleton needs at least 512 bytes");
    if (n_sections == 0 || n_sections > kMaxSkeletonSections)
        throw Error(ErrorCode::InvalidConfig, "skeleton supports 1 to 3 sections");

    RawBinary bin;
    auto& b = bin.bytes;
    b.assign(length, 0);

    put_u16(b, 0, pe::kDosMagic);
    put_u16(b, 0x02, 0x90);  // bytes on last page
    put_u16(b, 0x04, 0x03);  // pages
    put_u16(b, 0x08, 0x04);  // header paragraphs
    put_u16(b, 0x0C, 0xFFFF);
    put_u16(b, 0x10, 0xB8);  // initial SP
    put_u16(b, 0x18, 0x40);  // relocation table offset
    put_u32(b, pe::kLfanewOffset, kLfanew);
    std::copy(kDosStubCode.begin(), kDosStubCode.end(), b.begin() + kStubStart);
    std::copy_n(kDosStubText, sizeof kDosStubText - 1, b.begin() + kStubStart + kDosStubCode.size());

    put_u32(b, kLfanew, pe::kPeSignature);
    const std::size_t coff = kLfanew + 4;
    put_u16(b, coff, 0x014C);  // i386
    put_u16(b, coff + 2, static_cast<std::uint16_t>(n_sections));
    put_u32(b, coff + 4, timestamp);
    put_u16(b, coff + 16, static_cast<std::uint16_t>(kOptionalHeaderSize));
    put_u16(b, coff + 18, 0x0102);  // executable, 32-bit

    const auto data_size = static_cast<std::uint32_t>(length - kSkeletonHeaderSize);
    const std::size_t opt = coff + pe::kCoffHeaderSize;
    put_u16(b, opt, 0x010B);  // PE32
    b[opt + 2] = 14;           // linker major
    put_u32(b, opt + 4, data_size);        // SizeOfCode
    put_u32(b, opt + 16, 0x1000);          // AddressOfEntryPoint
    put_u32(b, opt + 20, 0x1000);          // BaseOfCode
    put_u32(b, opt + 28, 0x00400000);      // ImageBase
    put_u32(b, opt + 32, 0x1000);          // SectionAlignment
    put_u32(b, opt + 36, 0x200);           // FileAlignment
    put_u16(b, opt + 40, 6);               // OS major
    put_u16(b, opt + 48, 6);               // subsystem major
    put_u32(b, opt + 60, static_cast<std::uint32_t>(kSkeletonHeaderSize));  // SizeOfHeaders
    put_u16(b, opt + 68, 3);               // console subsystem
    put_u32(b, opt + 92, 16);              // NumberOfRvaAndSizes

    static constexpr std::array<const char*, kMaxSkeletonSections> names = {".text", ".rdata", ".data"};
    const std::uint32_t share = data_size / static_cast<std::uint32_t>(n_sections);
    std::uint32_t raw = static_cast<std::uint32_t>(kSkeletonHeaderSize);
    std::uint32_t rva = 0x1000;
    for (std::size_t i = 0; i < n_sections; ++i) {
        const std::uint32_t size =
            i + 1 == n_sections ? static_cast<std::uint32_t>(length) - raw : share;
        const std::size_t entry = kSectionTable + i * pe::kSectionEntrySize;
        const char* name = names[i];
        for (std::size_t c = 0; name[c] != '\0'; ++c)
            b[entry + c] = static_cast<std::uint8_t>(name[c]);
        put_u32(b, entry + 8, size);    // VirtualSize
        put_u32(b, entry + 12, rva);    // VirtualAddress
        put_u32(b, entry + 16, size);   // SizeOfRawData
        put_u32(b, entry + 20, size > 0 ? raw : 0);
        put_u32(b, entry + 36, i == 0 ? 0x60000020u : 0x40000040u);
        raw += size;
        rva += align_up(std::max<std::uint32_t>(size, 1), 0x1000);
    }
    put_u32(b, opt + 56, rva);  // SizeOfImage
    return bin;
}

RawBinary generate_sample(const CorpusSpec& spec, Label label, std::size_t index)
{
    const std::uint64_t seed =
        derive_seed(spec.seed, {label == Label::Malware ? 1u : 0u, static_cast<std::uint64_t>(index)});
    std::mt19937_64 rng(seed);

    const std::size_t length = draw_length(spec, rng);
    RawBinary bin = make_pe_skeleton(length, 1, static_cast<std::uint32_t>(rng()));
    fill_sections(bin.bytes, label, rng);

    if (label == Label::Malware) {
        const auto offsets = motif_offsets(length, 1, spec.motif.size(), spec.motif_region);
        if (offsets.empty())
            throw Error(ErrorCode::InvalidConfig, "no room for the motif in a file of length " +
                                                      std::to_string(length));
        std::uniform_int_distribution<std::size_t> pick(0, offsets.size() - 1);
        const int copies = 1 + static_cast<int>(rng() % 2);
        for (int c = 0; c < copies; ++c)
            std::copy(spec.motif.begin(), spec.motif.end(),
                      bin.bytes.begin() + static_cast<std::ptrdiff_t>(offsets[pick(rng)]));
    } else {
        // Filler must never reproduce the motif by chance.
        while (auto at = find_motif(bin.bytes, spec.motif))
            bin.bytes[*at + spec.motif.size() - 1] ^= 0x01;
    }
    return bin;
}

Manifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir)
{
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        throw Error(ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());

    Manifest manifest;
    manifest.root = out_dir;
    manifest.seed = spec.seed;
    const std::size_t total = spec.n_malware + spec.n_benign;
    manifest.entries.resize(total);

    const auto n = static_cast<std::ptrdiff_t>(total);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const bool mal = idx < spec.n_malware;
        const Label label = mal ? Label::Malware : Label::Benign;
        const std::size_t class_index = mal ? idx : idx - spec.n_malware;
        char name[32];
        std::snprintf(name, sizeof name, "%s_%05zu.bin", mal ? "mal" : "ben", class_index);
        try {
            const RawBinary bin = generate_sample(spec, label, class_index);
            write_binary(out_dir / name, bin);
            manifest.entries[idx] = {name, label, bin.length(),
                                     derive_seed(spec.seed, {mal ? 1u : 0u, class_index})};
        } catch (...) {
#pragma omp critical
            if (!failure)
                failure = std::current_exception();
        }
    }
    if (failure)
        std::rethrow_exception(failure);
    save_manifest(manifest, out_dir);
    return manifest;
}

std::optional<std::size_t> find_motif(std::span<const std::uint8_t> bytes,
                                      std::span<const std::uint8_t> motif)
{
    if (motif.empty() || motif.size() > bytes.size())
        return std::nullopt;
    const auto it = std::search(bytes.begin(), bytes.end(), motif.begin(), motif.end());
    if (it == bytes.end())
        return std::nullopt;
    return static_cast<std::size_t>(it - bytes.begin());
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& dir)
{
    nlohmann::json files = nlohmann::json::array();
    for (const auto& e : manifest.entries)
        files.push_back({{"file", e.file},
                         {"label", std::string(to_string(e.label))},
                         {"length", e.length},
                         {"seed", e.seed}});
    const nlohmann::json doc = {{"version", 1}, {"seed", manifest.seed}, {"files", files}};
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write manifest in " + dir.string());
    out << doc.dump(2) << '\n';
}

Manifest load_manifest(const std::filesystem::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    if (!in)
        throw Error(ErrorCode::IoError, "no manifest.json in " + dir.string());
    Manifest m;
    m.root = dir;
    try {
        const auto doc = nlohmann::json::parse(in);
        m.seed = doc.value("seed", std::uint64_t{0});
        for (const auto& f : doc.at("files")) {
            ManifestEntry e;
            e.file = f.at("file").get<std::string>();
            const auto label = f.at("label").get<std::string>();
            if (label != "malware" && label != "benign")
                throw Error(ErrorCode::IoError, "unknown label '" + label + "' in manifest");
            e.label = label == "malware" ? Label::Malware : Label::Benign;
            e.length = f.at("length").get<std::size_t>();
            e.seed = f.value("seed", std::uint64_t{0});
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::IoError, std::string("malformed manifest: ") + e.what());
    }
    return m;
}

} // namespace byteveil
