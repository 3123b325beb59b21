#include "motret/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "motret/binio.hpp"
#include "motret/common.hpp"

namespace motret {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'K', 'P'};
constexpr uint16_t kVersion = 1;

void put_words(std::ostream& os, const std::vector<std::string>& words) {
  io::put_u32(os, static_cast<uint32_t>(words.size()));
  for (const auto& w : words) {
    check_data(w.size() <= 0xffff, "checkpoint: word too long");
    io::put_u16(os, static_cast<uint16_t>(w.size()));
    io::put_bytes(os, w);
  }
}

std::vector<std::string> get_words(std::istream& is) {
  const uint32_t n = io::get_u32(is, "word count");
  std::vector<std::string> words;
  words.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    const uint16_t len = io::get_u16(is, "word length");
    words.push_back(io::get_bytes(is, len, "word"));
  }
  return words;
}

}  // namespace

void save_checkpoint(const RetrievalModel& model, const std::string& path) {
  std::ostringstream body;
  body.write(kMagic, 4);
  io::put_u16(body, kVersion);

  const std::string cfg = config_to_json(model.config()).dump();
  io::put_u32(body, static_cast<uint32_t>(cfg.size()));
  io::put_bytes(body, cfg);

  put_words(body, model.vocab().words());
  put_words(body, model.teacher().vocab().words());
  io::put_u32(body, static_cast<uint32_t>(model.teacher().idf().size()));
  for (double v : model.teacher().idf()) io::put_f64(body, v);
  io::put_u64(body, static_cast<uint64_t>(model.teacher().doc_count()));

  const auto& items = model.params().items();
  io::put_u32(body, static_cast<uint32_t>(items.size()));
  for (const auto& [name, var] : items) {
    check_data(name.size() <= 0xffff, "checkpoint: tensor name too long");
    io::put_u16(body, static_cast<uint16_t>(name.size()));
    io::put_bytes(body, name);
    const Tensor& t = var.value();
    io::put_u8(body, static_cast<uint8_t>(t.shape().size()));
    for (int d : t.shape()) io::put_u32(body, static_cast<uint32_t>(d));
    for (double v : t.vec()) io::put_f32(body, static_cast<float>(v));
  }

  const std::string payload = body.str();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check_data(out.good(), "checkpoint: cannot open for writing: " + path);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  io::put_u32(out, io::crc32(payload));
  check_data(out.good(), "checkpoint: write failed: " + path);
}

RetrievalModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_data(in.good(), "checkpoint: cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string all = buf.str();
  check_data(all.size() > 10, "checkpoint: file truncated: " + path);

  const std::string payload = all.substr(0, all.size() - 4);
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<uint32_t>(static_cast<uint8_t>(all[all.size() - 4 + i])) << (8 * i);
  check_data(io::crc32(payload) == stored, "checkpoint: checksum mismatch (corrupted file)");

  std::istringstream is(payload);
  const std::string magic = io::get_bytes(is, 4, "magic");
  check_data(std::equal(magic.begin(), magic.end(), kMagic), "checkpoint: bad magic");
  const uint16_t version = io::get_u16(is, "version");
  check_data(version == kVersion, "checkpoint: unsupported version");

  const uint32_t cfg_len = io::get_u32(is, "config length");
  const std::string cfg_str = io::get_bytes(is, cfg_len, "config");
  nlohmann::json j = nlohmann::json::parse(cfg_str, nullptr, false);
  check_data(!j.is_discarded(), "checkpoint: config is not valid JSON");
  ModelConfig cfg = config_from_json(j);

  Vocab vocab = Vocab::from_words(get_words(is));
  Vocab teacher_vocab = Vocab::from_words(get_words(is));
  const uint32_t idf_n = io::get_u32(is, "idf count");
  std::vector<double> idf;
  idf.reserve(idf_n);
  for (uint32_t i = 0; i < idf_n; ++i) idf.push_back(io::get_f64(is, "idf"));
  const long docs = static_cast<long>(io::get_u64(is, "doc count"));
  TfidfTeacher teacher = TfidfTeacher::from_state(std::move(teacher_vocab), std::move(idf), docs);

  RetrievalModel model(cfg, std::move(vocab), std::move(teacher), 0);

  const uint32_t n_tensors = io::get_u32(is, "tensor count");
  check_data(n_tensors == model.params().size(),
             "checkpoint: tensor count does not match the architecture");
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const uint16_t name_len = io::get_u16(is, "tensor name length");
    const std::string name = io::get_bytes(is, name_len, "tensor name");
    check_data(name == model.params().items()[i].first,
               "checkpoint: unexpected tensor order at " + name);
    const uint8_t rank = io::get_u8(is, "tensor rank");
    std::vector<int> shape;
    for (int d = 0; d < rank; ++d)
      shape.push_back(static_cast<int>(io::get_u32(is, "tensor dim")));
    Tensor& dst = model.params().get(name).mutable_value();
    check_data(shape == dst.shape(), "checkpoint: shape mismatch for " + name);
    for (double& v : dst.vec()) v = static_cast<double>(io::get_f32(is, "tensor data"));
  }
  check_data(is.peek() == EOF, "checkpoint: trailing bytes after tensors");
  return model;
}

}  // namespace motret
