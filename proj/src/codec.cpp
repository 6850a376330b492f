#include "sentimidi/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "sentimidi/errors.hpp"

namespace sentimidi {

namespace {

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

int quantize_to_bins(double raw, int bin, int lo, int hi) {
    int q = round_half_up(raw / bin) * bin;
    return std::clamp(q, lo, hi);
}

}  // namespace

void MidiPiece::normalize() {
    std::sort(notes.begin(), notes.end(), [](const Note& a, const Note& b) {
        if (a.onset != b.onset) return a.onset < b.onset;
        if (a.pitch != b.pitch) return a.pitch < b.pitch;
        if (a.duration32 != b.duration32) return a.duration32 < b.duration32;
        return a.velocity < b.velocity;
    });
    std::stable_sort(tempo_changes.begin(), tempo_changes.end(),
                     [](const TempoChange& a, const TempoChange& b) { return a.onset < b.onset; });
    // Last change at an onset wins.
    std::vector<TempoChange> dedup;
    for (const auto& tc : tempo_changes) {
        if (!dedup.empty() && dedup.back().onset == tc.onset)
            dedup.back().bpm = tc.bpm;
        else
            dedup.push_back(tc);
    }
    tempo_changes = std::move(dedup);
}

int quantize_velocity(int velocity, const QuantizerConfig& cfg) {
    return quantize_to_bins(velocity, cfg.velocity_bin, cfg.velocity_min, cfg.velocity_max);
}

int quantize_tempo(double bpm, const QuantizerConfig& cfg) {
    return quantize_to_bins(bpm, cfg.tempo_bin, cfg.tempo_min, cfg.tempo_max);
}

Duration quantize_duration(double length32) {
    Duration best;
    double best_dist = -1.0;
    const double eps = 1e-9;
    for (int t = 0; t < kNumDurationTypes; ++t) {
        for (int dots = 0; dots <= kMaxDots; ++dots) {
            Duration d{static_cast<DurationType>(t), dots};
            const double dist = std::abs(d.length32() - length32);
            if (best_dist < 0 || dist < best_dist - eps) {
                best = d;
                best_dist = dist;
            } else if (dist < best_dist + eps) {
                // Tie: fewer dots first, then the longer base type (smaller
                // enum value). Iteration order already visits longer bases
                // first, so only the dots rule needs a check.
                if (dots < best.dots) {
                    best = d;
                    best_dist = dist;
                }
            }
        }
    }
    return best;
}

std::vector<int> encode(const MidiPiece& piece, const Vocab& vocab, const QuantizerConfig& cfg) {
    MidiPiece p = piece;
    p.normalize();

    std::vector<int> out;
    out.reserve(p.notes.size() * 2 + static_cast<size_t>(p.end_step) + 8);

    int cur_tempo = -1;
    int cur_vel = -1;
    int cur_dur = -1;  // duration word id
    size_t ni = 0, ti = 0;
    for (int step = 0; step < p.end_step; ++step) {
        int pending_tempo = -1;
        while (ti < p.tempo_changes.size() && p.tempo_changes[ti].onset <= step) {
            pending_tempo = quantize_tempo(p.tempo_changes[ti].bpm, cfg);
            ++ti;
        }
        if (pending_tempo >= 0 && pending_tempo != cur_tempo) {
            cur_tempo = pending_tempo;
            out.push_back(vocab.tempo_id(cur_tempo));
        }
        for (; ni < p.notes.size() && p.notes[ni].onset == step; ++ni) {
            const Note& n = p.notes[ni];
            const int qv = quantize_velocity(n.velocity, cfg);
            const int qd = vocab.duration_id(quantize_duration(n.duration32));
            if (qv != cur_vel) {
                cur_vel = qv;
                out.push_back(vocab.velocity_id(qv));
            }
            if (qd != cur_dur) {
                cur_dur = qd;
                out.push_back(qd);
            }
            out.push_back(vocab.note_id(n.pitch));
        }
        out.push_back(vocab.step_id());
    }
    out.push_back(vocab.end_id());
    return out;
}

MidiPiece decode(std::span<const int> tokens, const Vocab& vocab, const DecodeDefaults& defaults) {
    MidiPiece piece;
    int step = 0;
    int vel = defaults.velocity;
    double dur = defaults.duration.length32();
    bool done = false;
    for (int id : tokens) {
        if (done) break;
        switch (vocab.kind(id)) {
            case WordKind::Tempo:
                piece.tempo_changes.push_back({step, static_cast<double>(vocab.value(id))});
                break;
            case WordKind::Velocity:
                vel = vocab.value(id);
                break;
            case WordKind::Duration:
                dur = vocab.duration(id).length32();
                break;
            case WordKind::Note:
                // Binned velocity 128 exceeds the raw MIDI range.
                piece.notes.push_back({step, vocab.value(id), std::min(vel, 127), dur});
                break;
            case WordKind::Step:
                ++step;
                break;
            case WordKind::End:
                done = true;
                break;
        }
    }
    piece.end_step = step;
    piece.normalize();
    return piece;
}

AugmentResult augment(const MidiPiece& piece, double stretch, int transpose) {
    AugmentResult result;
    result.piece.end_step = piece.end_step;
    for (const Note& n : piece.notes) {
        const int p = n.pitch + transpose;
        if (p < 0 || p >= kNumPitches) {
            ++result.dropped_notes;
            continue;
        }
        Note shifted = n;
        shifted.pitch = p;
        result.piece.notes.push_back(shifted);
    }
    for (const TempoChange& tc : piece.tempo_changes)
        result.piece.tempo_changes.push_back({tc.onset, tc.bpm * stretch});
    result.piece.normalize();
    return result;
}

std::vector<std::pair<double, int>> augmentation_grid() {
    std::vector<std::pair<double, int>> grid;
    for (double s : {0.95, 0.975, 1.0, 1.025, 1.05})
        for (int t = -4; t <= 4; ++t) grid.emplace_back(s, t);
    return grid;
}

std::string tokens_to_line(std::span<const int> tokens, const Vocab& vocab) {
    std::string line;
    for (int id : tokens) {
        if (id == vocab.end_id()) break;
        if (!line.empty()) line += ' ';
        line += vocab.word(id);
    }
    return line;
}

std::vector<int> line_to_tokens(const std::string& line, const Vocab& vocab) {
    std::vector<int> ids;
    std::istringstream ss(line);
    std::string w;
    while (ss >> w) ids.push_back(vocab.id(w));
    ids.push_back(vocab.end_id());
    return ids;
}

std::vector<std::string> read_token_lines(std::istream& in) {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

std::vector<std::string> read_token_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open token file: " + path);
    return read_token_lines(in);
}

void write_token_file(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write token file: " + path);
    for (const auto& l : lines) out << l << '\n';
}

}  // namespace sentimidi
