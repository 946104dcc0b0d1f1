/// @file writers.hpp
/// @brief Output probes. Files are written under a temporary name and renamed on close.
#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "records.hpp"

namespace hytraffic {

/// Output file that only appears under its final name once committed.
class AtomicFile {
public:
  explicit AtomicFile(std::filesystem::path path) : m_path(std::move(path)), m_tmp(m_path) {
    m_tmp += ".tmp";
    if (m_path.has_parent_path()) std::filesystem::create_directories(m_path.parent_path());
    m_out.open(m_tmp, std::ios::binary | std::ios::trunc);
    if (!m_out) throw Error("cannot open " + m_tmp.string() + " for writing");
  }
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;
  ~AtomicFile() {
    if (m_out.is_open()) {
      m_out.close();
      std::error_code ec;
      std::filesystem::remove(m_tmp, ec);
    }
  }

  void write(const std::string& s) { m_out << s; }

  void commit() {
    if (!m_out.is_open()) return;
    m_out.close();
    if (!m_out) throw Error("write failed: " + m_tmp.string());
    std::filesystem::rename(m_tmp, m_path);
  }

  const std::filesystem::path& path() const { return m_path; }

private:
  std::filesystem::path m_path;
  std::filesystem::path m_tmp;
  std::ofstream m_out;
};

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  AtomicFile f(path);
  f.write(text);
  f.commit();
}

enum class OutputFormat { Csv, Json };

/// Step records, one per step (steps.csv or steps.jsonl).
class StepWriter : public Probe {
public:
  StepWriter(const std::filesystem::path& dir, OutputFormat format)
      : m_format(format), m_file(dir / (format == OutputFormat::Csv ? "steps.csv" : "steps.jsonl")) {
    if (m_format == OutputFormat::Csv) m_file.write(kStepCsvHeader);
  }
  std::string name() const override { return "steps"; }
  void on_step_end(const Engine& e) override {
    const auto r = make_step_record(e);
    m_file.write(m_format == OutputFormat::Csv ? step_csv_rows(r) : step_json(r).dump() + "\n");
  }
  void on_final(const Engine&) override { m_file.commit(); }
  void on_error(const Engine&, const std::exception&) override { m_file.commit(); }

private:
  OutputFormat m_format;
  AtomicFile m_file;
};

/// Level-of-detail transition log (transitions.csv).
class TransitionWriter : public Probe {
public:
  explicit TransitionWriter(const std::filesystem::path& dir) : m_file(dir / "transitions.csv") {
    m_file.write(kTransitionCsvHeader);
  }
  std::string name() const override { return "transitions"; }
  void on_step_end(const Engine& e) override { flush(e); }
  void on_final(const Engine& e) override {
    flush(e);
    m_file.commit();
  }
  void on_error(const Engine& e, const std::exception&) override {
    flush(e);
    m_file.commit();
  }

private:
  void flush(const Engine& e) {
    const auto& log = e.transitions();
    for (; m_written < log.size(); ++m_written) m_file.write(transition_csv_row(log[m_written]));
  }
  AtomicFile m_file;
  std::size_t m_written = 0;
};

/// Microscopic vehicle states after every step (trajectories.csv).
class TrajectoryWriter : public Probe {
public:
  explicit TrajectoryWriter(const std::filesystem::path& dir) : m_file(dir / "trajectories.csv") {
    m_file.write("step,time,vehicle,cluster,road,lane,position,speed\n");
  }
  std::string name() const override { return "trajectories"; }
  void on_step_end(const Engine& e) override {
    std::vector<std::pair<VehicleId, std::string>> rows;
    const std::string head = std::to_string(e.step()) + "," + fmt9(e.time()) + ",";
    for (const auto& c : e.clusters())
      for (const auto& v : c.vehicles)
        rows.emplace_back(v.id, head + std::to_string(v.id) + "," + std::to_string(c.id) + "," + v.road + "," +
                                    std::to_string(v.lane) + "," + fmt9(v.position) + "," + fmt9(v.speed) + "\n");
    std::sort(rows.begin(), rows.end());
    for (const auto& [_, row] : rows) m_file.write(row);
  }
  void on_final(const Engine&) override { m_file.commit(); }
  void on_error(const Engine&, const std::exception&) override { m_file.commit(); }

private:
  AtomicFile m_file;
};

/// Checks the mass identity after every step and logs it (mass.csv). A mismatch is
/// reported as a probe failure.
class MassAuditor : public Probe {
public:
  explicit MassAuditor(const std::filesystem::path& dir, double tolerance = 1e-9)
      : m_file(dir / "mass.csv"), m_tol(tolerance) {
    m_file.write("step,total_mass,expected_mass,difference\n");
  }
  std::string name() const override { return "mass"; }
  void on_step_end(const Engine& e) override {
    const double total = e.total_mass();
    const double expected = e.expected_mass();
    const double diff = total - expected;
    m_file.write(std::to_string(e.step()) + "," + fmt9(total) + "," + fmt9(expected) + "," + fmt9(diff) + "\n");
    m_max = std::max(m_max, std::abs(diff));
    if (std::abs(diff) > m_tol * std::max(1.0, std::abs(expected)))
      throw Error("mass identity broken at step " + std::to_string(e.step()) + ": difference " + fmt9(diff));
  }
  void on_final(const Engine&) override { m_file.commit(); }
  void on_error(const Engine&, const std::exception&) override { m_file.commit(); }
  double max_difference() const { return m_max; }

private:
  AtomicFile m_file;
  double m_tol;
  double m_max = 0.0;
};

}  // namespace hytraffic
