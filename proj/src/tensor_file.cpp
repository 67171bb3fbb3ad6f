#include "strep/tensor_file.hpp"

#include "strep/byteio.hpp"

namespace strep {

const TensorEntry* TensorFile::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

const Tensor<float>& TensorFile::f32(const std::string& name) const {
    const auto* e = find(name);
    require(e && std::holds_alternative<Tensor<float>>(e->data), ErrorKind::Data, "missing float tensor '" + name + "'");
    return std::get<Tensor<float>>(e->data);
}

const Tensor<std::int64_t>& TensorFile::i64(const std::string& name) const {
    const auto* e = find(name);
    require(e && std::holds_alternative<Tensor<std::int64_t>>(e->data), ErrorKind::Data,
            "missing integer tensor '" + name + "'");
    return std::get<Tensor<std::int64_t>>(e->data);
}

namespace {

template <typename U>
void put_tensor(io::ByteWriter& w, const Tensor<U>& t, std::uint8_t dtype) {
    w.put<std::uint8_t>(dtype);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    w.bytes(t.ptr(), t.size() * sizeof(U));
}

template <typename U>
Tensor<U> get_tensor(io::ByteReader& r, std::size_t rank, const std::string& what) {
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
        d = r.get<std::uint64_t>();
        require(d == 0 || count <= r.remaining() / d, ErrorKind::Data, "corrupt " + what + ": implausible extent");
        count *= d;
    }
    require(count * sizeof(U) <= r.remaining(), ErrorKind::Data, "corrupt " + what + ": truncated tensor data");
    Tensor<U> t(shape);
    r.bytes(t.ptr(), count * sizeof(U));
    return t;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& f) {
    io::ByteWriter w;
    w.str("STRC");
    w.put<std::uint8_t>(kTensorFileVersion);
    const std::string meta = f.meta.dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
    w.str(meta);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(f.entries.size()));
    for (const auto& e : f.entries) {
        require(e.name.size() <= 0xFFFF, ErrorKind::Data, "tensor name too long");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
        w.str(e.name);
        if (const auto* t = std::get_if<Tensor<float>>(&e.data))
            put_tensor(w, *t, 0);
        else
            put_tensor(w, std::get<Tensor<std::int64_t>>(e.data), 1);
    }
    const auto sum = io::fnv1a(w.buffer().data(), w.buffer().size());
    w.put<std::uint64_t>(sum);
    return std::move(w.buffer());
}

TensorFile decode_tensor_file(const std::vector<std::uint8_t>& bytes, const std::string& what) {
    io::ByteReader r(bytes, what);
    require(r.str(4) == "STRC", ErrorKind::Data, "corrupt " + what + ": bad magic");
    const auto version = r.get<std::uint8_t>();
    require(version == kTensorFileVersion, ErrorKind::Data,
            what + ": format version " + std::to_string(version) + ", expected " + std::to_string(kTensorFileVersion));
    require(bytes.size() >= 8 + r.position(), ErrorKind::Data, "corrupt " + what + ": truncated");
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    require(io::fnv1a(bytes.data(), bytes.size() - 8) == stored, ErrorKind::Data, "corrupt " + what + ": checksum mismatch");

    TensorFile f;
    const auto meta_len = r.get<std::uint32_t>();
    try {
        f.meta = nlohmann::json::parse(r.str(meta_len));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Data, "corrupt " + what + ": " + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorEntry e;
        e.name = r.str(r.get<std::uint16_t>());
        const auto dtype = r.get<std::uint8_t>();
        const auto rank = r.get<std::uint8_t>();
        if (dtype == 0)
            e.data = get_tensor<float>(r, rank, what);
        else if (dtype == 1)
            e.data = get_tensor<std::int64_t>(r, rank, what);
        else
            fail(ErrorKind::Data, "corrupt " + what + ": unknown dtype " + std::to_string(dtype));
        f.entries.push_back(std::move(e));
    }
    require(r.remaining() == 8, ErrorKind::Data, "corrupt " + what + ": trailing bytes");
    return f;
}

void save_tensor_file(const TensorFile& f, const std::string& path) { io::write_file(path, encode_tensor_file(f)); }

TensorFile load_tensor_file(const std::string& path, const std::string& what) {
    return decode_tensor_file(io::read_file(path), what + " " + path);
}

}  // namespace strep
