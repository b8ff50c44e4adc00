#include "freqdiff/trajectory.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace freqdiff {

bool Trajectory::finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(),
          "unparsable number: '" + s + "'");
  return v;
}

void write_trajectories_csv(const std::string& path,
                            const std::vector<Trajectory>& trajs) {
  require(!trajs.empty(), "no trajectories to write");
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open for write: " + path);
  std::string line;
  for (size_t i = 0; i < trajs.size(); ++i) {
    const Trajectory& x = trajs[i];
    if (i > 0) f << "\n";
    f << "t";
    for (int a = 0; a < x.d; ++a) f << ",a" << a;
    f << "\n";
    for (int t = 0; t < x.n; ++t) {
      line.clear();
      line += std::to_string(t);
      for (int a = 0; a < x.d; ++a) {
        line += ',';
        line += format_double(x.at(t, a));
      }
      line += '\n';
      f << line;
    }
  }
  require(f.good(), "write failed: " + path);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::vector<Trajectory> read_trajectories_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open: " + path);
  std::vector<Trajectory> out;
  std::string line;
  bool expect_header = true;
  int d = 0;
  std::vector<double> rows;
  auto flush = [&]() {
    if (rows.empty()) return;
    Trajectory x(static_cast<int>(rows.size()) / d, d);
    x.data = rows;
    require(x.finite(), "non-finite value in " + path);
    out.push_back(std::move(x));
    rows.clear();
  };
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      expect_header = true;
      continue;
    }
    auto cells = split_csv(line);
    if (expect_header) {
      require(cells.size() >= 2 && cells[0] == "t",
              "bad trajectory CSV header in " + path);
      d = static_cast<int>(cells.size()) - 1;
      expect_header = false;
      continue;
    }
    require(static_cast<int>(cells.size()) == d + 1,
            "ragged row in " + path);
    for (int a = 0; a < d; ++a) rows.push_back(parse_double(cells[a + 1]));
  }
  flush();
  require(!out.empty(), "no trajectories in " + path);
  return out;
}

std::uint64_t trajectories_hash(const std::vector<Trajectory>& trajs) {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const void* p, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& tr : trajs) {
    std::uint64_t dims[2] = {static_cast<std::uint64_t>(tr.n),
                             static_cast<std::uint64_t>(tr.d)};
    mix(dims, sizeof(dims));
    mix(tr.data.data(), tr.data.size() * sizeof(double));
  }
  return h;
}

}  // namespace freqdiff
