/* Copyright 2026 The Handpress Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "handpress/sync.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace handpress {

void DeviceStream::validate() const {
  if (ticks.size() != marker_visible.size())
    throw DataError("DeviceStream: ticks/visibility length mismatch");
  for (size_t i = 1; i < ticks.size(); ++i)
    if (ticks[i] <= ticks[i - 1])
      throw DataError("DeviceStream " + device_id + ": ticks must be strictly increasing");
  if (!(t0 < t1)) throw DataError("DeviceStream " + device_id + ": requires t0 < t1");
  if (tick_rate_hz <= 0 || nominal_rate_hz <= 0)
    throw DataError("DeviceStream " + device_id + ": rates must be positive");
}

SyncReport synchronize(const std::vector<DeviceStream>& streams) {
  SyncReport report;
  for (const DeviceStream& s : streams) {
    s.validate();
    DeviceSync d;
    d.device_id = s.device_id;
    const auto it = std::find(s.marker_visible.begin(), s.marker_visible.end(), true);
    if (it == s.marker_visible.end())
      throw UnanchoredStreamError("synchronize: stream " + s.device_id +
                                  " has no marker activation edge");
    d.anchor_index = static_cast<int>(it - s.marker_visible.begin());
    // first exposure after t0 happens at t0 + the device's trigger delay
    const double anchor_time = s.t0 + s.trigger_delay_s;
    const int64_t anchor_tick = s.ticks[d.anchor_index];
    d.timestamps.resize(s.ticks.size());
    for (size_t i = 0; i < s.ticks.size(); ++i)
      d.timestamps[i] = anchor_time + (s.ticks[i] - anchor_tick) / s.tick_rate_hz;

    // deactivation edge: visibility must return to false before the end
    int deactivation = -1;
    for (size_t i = d.anchor_index; i < s.marker_visible.size(); ++i) {
      if (!s.marker_visible[i]) {
        deactivation = static_cast<int>(i);
        break;
      }
    }
    if (deactivation < 0) {
      d.degraded = true;  // anchor-only
    } else {
      int count = 0;
      for (bool v : s.marker_visible)
        if (v) ++count;
      d.frames_between = count;
    }
    report.devices.push_back(std::move(d));
  }

  // equal frame number between t0 and t1 across devices
  int reference = -1;
  bool all_equal = true;
  for (const auto& d : report.devices) {
    if (d.degraded) continue;
    if (reference < 0) {
      reference = d.frames_between;
    } else if (d.frames_between != reference) {
      all_equal = false;
    }
  }
  if (!all_equal) {
    // name every device disagreeing with the majority count
    std::map<int, int> votes;
    for (const auto& d : report.devices)
      if (!d.degraded) ++votes[d.frames_between];
    int majority = reference;
    int best = 0;
    for (const auto& [count, n] : votes)
      if (n > best) {
        best = n;
        majority = count;
      }
    for (const auto& d : report.devices)
      if (!d.degraded && d.frames_between != majority)
        report.mismatched_devices.push_back(d.device_id);
  }
  report.counts_verified = all_equal && reference >= 0;
  return report;
}

SimulatedRig simulate_rig(const SimRigConfig& config, uint64_t seed) {
  if (config.devices < 1 || config.rate_hz <= 0 || config.duration_s <= 0)
    throw std::invalid_argument("simulate_rig: invalid config");
  SimulatedRig rig;
  const double period = 1.0 / config.rate_hz;
  const int64_t period_ticks = static_cast<int64_t>(std::llround(period * config.tick_rate_hz));
  const int total_triggers = static_cast<int>(config.duration_s / period);
  const int t0_idx = static_cast<int>(std::ceil(config.activation_s / period));
  const int t1_idx = std::max(t0_idx + 1, total_triggers - 6);
  rig.t0 = t0_idx * period;
  rig.t1 = t1_idx * period;

  auto rng = make_rng(seed, 17);
  std::uniform_int_distribution<int> loss_dist(config.initial_loss_min,
                                               config.initial_loss_max);
  const int64_t max_delay_ticks = std::max<int64_t>(
      1, static_cast<int64_t>(period_ticks * config.max_delay_fraction));
  std::uniform_int_distribution<int64_t> delay_dist(0, max_delay_ticks - 1);
  std::uniform_int_distribution<int64_t> epoch_dist(0, 1000000000LL);

  std::vector<int> midstream(config.devices, 0);
  if (config.midstream_loss_devices > 0) {
    std::vector<int> order(config.devices);
    for (int i = 0; i < config.devices; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < std::min(config.midstream_loss_devices, config.devices); ++i)
      midstream[order[i]] = 1;
  }

  for (int dev = 0; dev < config.devices; ++dev) {
    DeviceStream s;
    s.device_id = "cam" + std::to_string(dev);
    s.nominal_rate_hz = config.rate_hz;
    s.tick_rate_hz = config.tick_rate_hz;
    const int64_t delay_ticks = dev == 0 ? 0 : delay_dist(rng);
    s.trigger_delay_s = delay_ticks / config.tick_rate_hz;
    s.t0 = rig.t0;
    s.t1 = rig.t1;
    const int loss = loss_dist(rng);
    const int64_t epoch = epoch_dist(rng);
    std::vector<double> truth;
    for (int k = loss; k < total_triggers; ++k) {
      const int64_t tick = k * period_ticks + delay_ticks + epoch;
      s.ticks.push_back(tick);
      s.marker_visible.push_back(k >= t0_idx && k < t1_idx);
      truth.push_back(k * period + s.trigger_delay_s);
    }
    if (midstream[dev]) {
      // drop one visible frame mid-stream
      std::vector<int> visible_idx;
      for (size_t i = 1; i + 1 < s.marker_visible.size(); ++i)
        if (s.marker_visible[i] && s.marker_visible[i - 1]) visible_idx.push_back(static_cast<int>(i));
      if (!visible_idx.empty()) {
        std::uniform_int_distribution<size_t> pick(0, visible_idx.size() - 1);
        const int drop = visible_idx[pick(rng)];
        s.ticks.erase(s.ticks.begin() + drop);
        s.marker_visible.erase(s.marker_visible.begin() + drop);
        truth.erase(truth.begin() + drop);
        rig.midstream_loss_injected = true;
      }
    }
    rig.streams.push_back(std::move(s));
    rig.true_timestamps.push_back(std::move(truth));
  }
  return rig;
}

void save_stream_csv(const DeviceStream& stream, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("save_stream_csv: cannot open " + path);
  os << "# device_id=" << stream.device_id << "\n";
  os << "# nominal_rate_hz=" << format_double(stream.nominal_rate_hz) << "\n";
  os << "# tick_rate_hz=" << format_double(stream.tick_rate_hz) << "\n";
  os << "# trigger_delay_s=" << format_double(stream.trigger_delay_s) << "\n";
  os << "# t0=" << format_double(stream.t0) << "\n";
  os << "# t1=" << format_double(stream.t1) << "\n";
  os << "frame_idx,device_tick,marker_visible\n";
  for (size_t i = 0; i < stream.ticks.size(); ++i)
    os << i << "," << stream.ticks[i] << "," << (stream.marker_visible[i] ? 1 : 0) << "\n";
}

DeviceStream load_stream_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("load_stream_csv: cannot open " + path);
  DeviceStream s;
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string val = line.substr(eq + 1);
      if (key == "device_id")
        s.device_id = val;
      else if (key == "nominal_rate_hz")
        s.nominal_rate_hz = std::stod(val);
      else if (key == "tick_rate_hz")
        s.tick_rate_hz = std::stod(val);
      else if (key == "trigger_delay_s")
        s.trigger_delay_s = std::stod(val);
      else if (key == "t0")
        s.t0 = std::stod(val);
      else if (key == "t1")
        s.t1 = std::stod(val);
      continue;
    }
    if (!header_seen) {
      if (line != "frame_idx,device_tick,marker_visible")
        throw DataError("load_stream_csv: bad header at line " + std::to_string(lineno) +
                        " in " + path);
      header_seen = true;
      continue;
    }
    std::istringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
      throw DataError("load_stream_csv: malformed line " + std::to_string(lineno) + " in " +
                      path);
    try {
      s.ticks.push_back(std::stoll(b));
      s.marker_visible.push_back(std::stoi(c) != 0);
    } catch (const std::exception&) {
      throw DataError("load_stream_csv: bad field at line " + std::to_string(lineno) +
                      " in " + path);
    }
  }
  if (!header_seen) throw DataError("load_stream_csv: missing header in " + path);
  s.validate();
  return s;
}

}  // namespace handpress
