#include "sentimidi/midi_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "sentimidi/errors.hpp"

namespace sentimidi {

namespace {

class ByteReader {
public:
    ByteReader(std::span<const uint8_t> bytes, size_t pos) : bytes_(bytes), pos_(pos) {}

    size_t pos() const { return pos_; }
    bool eof() const { return pos_ >= bytes_.size(); }

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError("malformed MIDI at byte " + std::to_string(pos_) + ": " + what);
    }

    uint8_t u8() {
        if (eof()) fail("unexpected end of data");
        return bytes_[pos_++];
    }

    uint8_t peek() const {
        if (eof()) throw DataError("malformed MIDI at byte " + std::to_string(pos_) +
                                   ": unexpected end of data");
        return bytes_[pos_];
    }

    uint16_t u16() { return static_cast<uint16_t>(u8() << 8 | u8()); }

    uint32_t u32() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = v << 8 | u8();
        return v;
    }

    uint32_t vlq() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            const uint8_t b = u8();
            v = (v << 7) | (b & 0x7f);
            if (!(b & 0x80)) return v;
        }
        fail("variable-length quantity longer than 4 bytes");
    }

    void skip(size_t n) {
        if (pos_ + n > bytes_.size()) fail("chunk overruns file");
        pos_ += n;
    }

private:
    std::span<const uint8_t> bytes_;
    size_t pos_;
};

struct RawNote {
    int64_t on_tick;
    int64_t off_tick;
    int pitch;
    int velocity;
};

struct RawTempo {
    int64_t tick;
    double bpm;
};

int64_t snap(double ticks, double unit) { return std::llround(ticks / unit); }

void append_vlq(std::vector<uint8_t>& out, uint32_t v) {
    uint8_t stack[4];
    int n = 0;
    do {
        stack[n++] = static_cast<uint8_t>(v & 0x7f);
        v >>= 7;
    } while (v != 0);
    while (n > 1) out.push_back(stack[--n] | 0x80);
    out.push_back(stack[0]);
}

}  // namespace

ParsedMidi parse_smf(std::span<const uint8_t> bytes) {
    ByteReader r(bytes, 0);
    if (bytes.size() < 14) r.fail("file shorter than header chunk");
    if (r.u32() != 0x4d546864) r.fail("missing MThd magic");
    const uint32_t header_len = r.u32();
    if (header_len < 6) r.fail("header chunk too short");
    const uint16_t format = r.u16();
    if (format > 1) r.fail("unsupported format " + std::to_string(format));
    const uint16_t ntrks = r.u16();
    const uint16_t division = r.u16();
    if (division & 0x8000) r.fail("SMPTE time division unsupported");
    if (division == 0) r.fail("zero ticks per quarter");
    r.skip(header_len - 6);

    const double step_ticks = division / 4.0;   // one sixteenth
    const double unit32_ticks = division / 8.0; // one 32nd

    ParsedMidi result;
    std::vector<RawNote> notes;
    std::vector<RawTempo> tempos;
    int64_t max_tick = 0;

    for (uint16_t trk = 0; trk < ntrks; ++trk) {
        if (r.u32() != 0x4d54726b) r.fail("missing MTrk magic");
        const uint32_t trk_len = r.u32();
        const size_t trk_end = r.pos() + trk_len;
        if (trk_end > bytes.size()) r.fail("track overruns file");

        int64_t tick = 0;
        uint8_t running_status = 0;
        // FIFO per (channel, pitch): first note-off closes the oldest on.
        std::map<std::pair<int, int>, std::vector<size_t>> open;

        while (r.pos() < trk_end) {
            tick += r.vlq();
            uint8_t status = r.peek();
            if (status & 0x80) {
                r.u8();
                if (status < 0xf0) running_status = status;
            } else {
                if (running_status == 0) r.fail("data byte without running status");
                status = running_status;
            }

            if (status == 0xff) {  // meta
                const uint8_t type = r.u8();
                const uint32_t len = r.vlq();
                if (type == 0x51) {
                    if (len != 3) r.fail("tempo meta with bad length");
                    const uint32_t uspq = static_cast<uint32_t>(r.u8()) << 16 |
                                          static_cast<uint32_t>(r.u8()) << 8 | r.u8();
                    if (uspq == 0) r.fail("zero microseconds per quarter");
                    tempos.push_back({tick, 60e6 / uspq});
                } else {
                    r.skip(len);
                }
            } else if (status == 0xf0 || status == 0xf7) {  // sysex
                r.skip(r.vlq());
            } else {
                const int kind = status >> 4;
                const int channel = status & 0x0f;
                switch (kind) {
                    case 0x8:    // note off
                    case 0x9: {  // note on (velocity 0 is an off)
                        const int pitch = r.u8() & 0x7f;
                        const int vel = r.u8() & 0x7f;
                        if (kind == 0x9 && vel > 0) {
                            open[{channel, pitch}].push_back(notes.size());
                            notes.push_back({tick, -1, pitch, vel});
                        } else {
                            auto& stack = open[{channel, pitch}];
                            if (!stack.empty()) {
                                notes[stack.front()].off_tick = tick;
                                stack.erase(stack.begin());
                            }
                        }
                        break;
                    }
                    case 0xa:  // poly aftertouch
                    case 0xb:  // controller
                    case 0xe:  // pitch bend
                        r.skip(2);
                        break;
                    case 0xc:  // program change
                    case 0xd:  // channel aftertouch
                        r.skip(1);
                        break;
                    default:
                        r.fail("unknown status byte");
                }
            }
        }
        if (r.pos() != trk_end) r.fail("event overruns track chunk");

        int unresolved = 0;
        for (auto& [key, stack] : open) {
            for (size_t idx : stack) {
                notes[idx].off_tick = tick;
                ++unresolved;
            }
        }
        if (unresolved > 0)
            result.warnings.push_back("track " + std::to_string(trk) + ": " +
                                      std::to_string(unresolved) +
                                      " unresolved note-on(s) closed at track end");
        max_tick = std::max(max_tick, tick);
    }

    MidiPiece& piece = result.piece;
    int end_step = 0;
    for (const RawNote& rn : notes) {
        Note n;
        n.onset = static_cast<int>(snap(static_cast<double>(rn.on_tick), step_ticks));
        n.pitch = rn.pitch;
        n.velocity = rn.velocity;
        const int64_t off = rn.off_tick < 0 ? max_tick : rn.off_tick;
        n.duration32 = std::max(static_cast<double>(off - rn.on_tick) / unit32_ticks, 0.5);
        piece.notes.push_back(n);
        end_step = std::max(end_step,
                            n.onset + std::max(1, static_cast<int>(std::ceil(n.duration32 / 2.0))));
    }
    for (const RawTempo& rt : tempos) {
        const int onset = static_cast<int>(snap(static_cast<double>(rt.tick), step_ticks));
        piece.tempo_changes.push_back({onset, rt.bpm});
        end_step = std::max(end_step, onset);
    }
    piece.end_step = end_step;
    piece.normalize();
    return result;
}

std::vector<uint8_t> write_smf(const MidiPiece& piece) {
    constexpr int kTpq = 480;
    constexpr int kStepTicks = kTpq / 4;
    constexpr int kUnit32Ticks = kTpq / 8;

    MidiPiece p = piece;
    p.normalize();

    struct NoteSpan {
        int64_t on, off;
        int pitch, velocity;
    };
    std::vector<NoteSpan> spans;
    spans.reserve(p.notes.size());
    for (const Note& n : p.notes) {
        const int64_t on = static_cast<int64_t>(n.onset) * kStepTicks;
        const int64_t off = on + std::max<int64_t>(1, std::llround(n.duration32 * kUnit32Ticks));
        spans.push_back({on, off, n.pitch, std::clamp(n.velocity, 1, 127)});
    }
    // Truncate same-pitch overlaps at the next onset.
    std::map<int, std::vector<size_t>> by_pitch;
    for (size_t i = 0; i < spans.size(); ++i) by_pitch[spans[i].pitch].push_back(i);
    std::vector<bool> keep(spans.size(), true);
    for (auto& [pitch, idxs] : by_pitch) {
        for (size_t k = 0; k + 1 < idxs.size(); ++k) {
            NoteSpan& a = spans[idxs[k]];
            const NoteSpan& b = spans[idxs[k + 1]];
            a.off = std::min(a.off, b.on);
            if (a.off <= a.on) keep[idxs[k]] = false;
        }
    }

    // kind ranks order at an equal tick: tempo, then offs, then ons.
    struct Event {
        int64_t tick;
        int kind;
        int a, b;
    };
    std::vector<Event> events;
    for (const TempoChange& tc : p.tempo_changes) {
        const int uspq = std::clamp(static_cast<int>(std::llround(60e6 / tc.bpm)), 1, 0xffffff);
        events.push_back({static_cast<int64_t>(tc.onset) * kStepTicks, 0, uspq, 0});
    }
    int64_t last_tick = static_cast<int64_t>(p.end_step) * kStepTicks;
    for (size_t i = 0; i < spans.size(); ++i) {
        if (!keep[i]) continue;
        events.push_back({spans[i].on, 2, spans[i].pitch, spans[i].velocity});
        events.push_back({spans[i].off, 1, spans[i].pitch, 0});
        last_tick = std::max(last_tick, spans[i].off);
    }
    std::stable_sort(events.begin(), events.end(), [](const Event& x, const Event& y) {
        if (x.tick != y.tick) return x.tick < y.tick;
        return x.kind < y.kind;
    });

    std::vector<uint8_t> track;
    int64_t cursor = 0;
    for (const Event& e : events) {
        append_vlq(track, static_cast<uint32_t>(e.tick - cursor));
        cursor = e.tick;
        if (e.kind == 0) {
            track.insert(track.end(), {0xff, 0x51, 0x03});
            track.push_back(static_cast<uint8_t>(e.a >> 16));
            track.push_back(static_cast<uint8_t>(e.a >> 8));
            track.push_back(static_cast<uint8_t>(e.a));
        } else if (e.kind == 1) {
            track.insert(track.end(), {0x80, static_cast<uint8_t>(e.a), 0x40});
        } else {
            track.insert(track.end(),
                         {0x90, static_cast<uint8_t>(e.a), static_cast<uint8_t>(e.b)});
        }
    }
    append_vlq(track, static_cast<uint32_t>(std::max<int64_t>(last_tick - cursor, 0)));
    track.insert(track.end(), {0xff, 0x2f, 0x00});

    std::vector<uint8_t> out;
    auto u32be = [&](uint32_t v) {
        out.push_back(static_cast<uint8_t>(v >> 24));
        out.push_back(static_cast<uint8_t>(v >> 16));
        out.push_back(static_cast<uint8_t>(v >> 8));
        out.push_back(static_cast<uint8_t>(v));
    };
    auto u16be = [&](uint16_t v) {
        out.push_back(static_cast<uint8_t>(v >> 8));
        out.push_back(static_cast<uint8_t>(v));
    };
    u32be(0x4d546864);
    u32be(6);
    u16be(0);
    u16be(1);
    u16be(kTpq);
    u32be(0x4d54726b);
    u32be(static_cast<uint32_t>(track.size()));
    out.insert(out.end(), track.begin(), track.end());
    return out;
}

ParsedMidi read_midi_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open MIDI file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return parse_smf(bytes);
}

void write_midi_file(const std::string& path, const MidiPiece& piece) {
    const auto bytes = write_smf(piece);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write MIDI file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

}  // namespace sentimidi
