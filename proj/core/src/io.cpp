#include "couplenet/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace couplenet {

using json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kMagic{"CPLNETCK", 8};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t u(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
  std::uint64_t u64() { return u(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view take(std::size_t n) {
    need(n);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint: unexpected end of data");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  const std::string cfg = to_json(ck.config);
  put_u64(out, cfg.size());
  out += cfg;
  std::uint32_t count = 0;
  for_each_param(ck.params, [&](const std::string&, std::span<const double>, const std::vector<std::size_t>&) { ++count; });
  put_u32(out, count);
  for_each_param(ck.params, [&](const std::string& name, std::span<const double> values,
                                const std::vector<std::size_t>& dims) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) put_u64(out, d);
    for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  });
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw IoError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::uint64_t cfg_len = r.u64();
  ck.config = run_config_from_json(r.take(cfg_len));

  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<double>>> stored;
  const std::uint32_t count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name(r.take(r.u32()));
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> dims(rank);
    std::size_t n = 1;
    for (auto& d : dims) {
      d = r.u64();
      n *= d;
    }
    std::vector<double> values(n);
    for (double& v : values) v = r.f64();
    stored.emplace(std::move(name), std::make_pair(std::move(dims), std::move(values)));
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes");

  ck.params = make_model_params(ck.config.model);
  for_each_param(ck.params, [&](const std::string& name, std::span<double> values,
                                const std::vector<std::size_t>& dims) {
    auto it = stored.find(name);
    if (it == stored.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
    if (it->second.first != dims) throw IoError("checkpoint: tensor '" + name + "' has wrong shape");
    std::copy(it->second.second.begin(), it->second.second.end(), values.begin());
    stored.erase(it);
  });
  if (!stored.empty()) throw IoError("checkpoint: unexpected tensor '" + stored.begin()->first + "'");
  return ck;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

namespace {

json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw IoError("manifest: box must have 4 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json scene_json(const Scene& s, std::size_t id, const char* split) {
  json objects = json::array();
  for (const SceneObject& o : s.objects) {
    json occ = json::array();
    for (const Box& b : o.occluders) occ.push_back(box_json(b));
    objects.push_back(json{{"class", to_string(o.cls)},
                           {"box", box_json(o.box)},
                           {"occluders", occ},
                           {"truncation", o.truncation}});
  }
  return json{{"id", id},         {"split", split},       {"width", s.image_w},
              {"height", s.image_h}, {"noise_seed", s.noise_seed}, {"objects", objects}};
}

}  // namespace

std::string manifest_to_json(const Dataset& d) {
  RunConfig holder;
  holder.data = d.config;
  const json cfg = json::parse(to_json(holder));
  json classes = json::array();
  for (auto name : kShapeClassNames) classes.push_back(std::string(name));
  json scenes = json::array();
  std::size_t id = 0;
  for (const Scene& s : d.train) scenes.push_back(scene_json(s, id++, "train"));
  for (const Scene& s : d.test) scenes.push_back(scene_json(s, id++, "test"));
  json j{{"version", kManifestVersion},
         {"seed", d.config.seed},
         {"splits", {{"train", d.train.size()}, {"test", d.test.size()}}},
         {"classes", classes},
         {"render", cfg["data"]},
         {"scenes", scenes}};
  return j.dump(1) + "\n";
}

Dataset dataset_from_manifest(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.at("version").get<int>() != kManifestVersion) throw IoError("manifest: unsupported version");
    json wrapper{{"version", kRunConfigVersion}, {"data", j.at("render")}};
    Dataset d;
    d.config = run_config_from_json(wrapper.dump()).data;
    if (d.config.seed != j.at("seed").get<std::uint64_t>()) throw IoError("manifest: seed mismatch");
    for (const json& sj : j.at("scenes")) {
      Scene s;
      s.image_w = sj.at("width").get<int>();
      s.image_h = sj.at("height").get<int>();
      s.noise_seed = sj.at("noise_seed").get<std::uint64_t>();
      for (const json& oj : sj.at("objects")) {
        SceneObject o;
        o.cls = parse_shape_class(oj.at("class").get<std::string>());
        o.box = box_from(oj.at("box"));
        for (const json& b : oj.at("occluders")) o.occluders.push_back(box_from(b));
        o.truncation = oj.at("truncation").get<double>();
        s.objects.push_back(std::move(o));
      }
      const std::string split = sj.at("split").get<std::string>();
      if (split == "train") {
        d.train.push_back(std::move(s));
      } else if (split == "test") {
        d.test.push_back(std::move(s));
      } else {
        throw IoError("manifest: unknown split '" + split + "'");
      }
    }
    if (d.train.size() != j.at("splits").at("train").get<std::size_t>() ||
        d.test.size() != j.at("splits").at("test").get<std::size_t>()) {
      throw IoError("manifest: split sizes do not match scene records");
    }
    return d;
  } catch (const json::exception& e) {
    throw IoError(std::string("manifest: ") + e.what());
  }
}

bool manifest_matches_regeneration(const Dataset& from_manifest) {
  const Dataset regen = generate_dataset(from_manifest.config);
  return regen.train == from_manifest.train && regen.test == from_manifest.test;
}

}  // namespace couplenet
