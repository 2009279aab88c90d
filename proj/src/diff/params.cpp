#include "tomodet/diff/params.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "tomodet/util/binary_io.hpp"
#include "tomodet/util/error.hpp"

namespace tomodet::diff {

const char* partition_name(Partition p) { return p == Partition::recon ? "recon" : "det"; }

Tensor& ParamSet::add(const std::string& name, Shape shape, std::vector<double> values)
{
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, Tensor::parameter(std::move(shape), std::move(values)));
    return entries_.back().second;
}

Tensor& ParamSet::at(const std::string& name)
{
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return entries_[it->second].second;
}

const Tensor& ParamSet::at(const std::string& name) const
{
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return entries_[it->second].second;
}

std::size_t ParamSet::element_total() const
{
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
}

void ParamSet::zero_grad()
{
    for (auto& [_, t] : entries_) t.zero_grad();
}

ParamSet ParamSet::frozen() const
{
    ParamSet out(partition_);
    out.index_ = index_;
    for (const auto& [name, t] : entries_) out.entries_.emplace_back(name, t.detach());
    return out;
}

void ParamSet::fill_zero()
{
    for (auto& [_, t] : entries_) {
        auto d = t.mutable_data();
        std::fill(d.begin(), d.end(), 0.0);
    }
}

double ParamSet::max_abs_grad() const
{
    double m = 0.0;
    for (const auto& [_, t] : entries_)
        if (t.has_grad())
            for (double g : t.grad()) m = std::max(m, std::abs(g));
    return m;
}

std::vector<double> he_uniform(std::size_t count, std::size_t fan_in, std::mt19937_64& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> out(count);
    for (auto& v : out) v = dist(rng);
    return out;
}

Adam::Adam(const ParamSet& params, AdamConfig config) : config_(config)
{
    if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    for (const auto& [_, t] : params) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

void Adam::step(ParamSet& params)
{
    if (params.size() != m_.size()) throw std::logic_error("Adam state does not match parameter set");
    for (const auto& [name, t] : params)
        if (!t.has_grad()) throw std::logic_error("Adam step: parameter " + name + " has no gradient");
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    std::size_t k = 0;
    for (auto& [_, t] : params) {
        auto w = t.mutable_data();
        const auto g = t.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
        ++k;
    }
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<const ParamSet*>& sets)
{
    io::write_atomically(path, [&](std::ostream& os) {
        os << "TDCKPT1\n";
        for (const ParamSet* set : sets)
            for (const auto& [name, t] : *set) {
                io::write_u32(os, static_cast<std::uint32_t>(name.size()));
                os.write(name.data(), static_cast<std::streamsize>(name.size()));
                io::write_u32(os, static_cast<std::uint32_t>(t.rank()));
                for (auto e : t.shape()) io::write_u32(os, static_cast<std::uint32_t>(e));
                std::vector<float> values(t.data().begin(), t.data().end());
                io::write_f32_array(os, values);
            }
    });
}

std::map<std::string, CheckpointEntry> read_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    io::expect_magic(is, "TDCKPT1", path);
    std::map<std::string, CheckpointEntry> out;
    while (is.peek() != std::char_traits<char>::eof()) {
        const auto len = io::read_u32(is, "checkpoint name length");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (is.gcount() != static_cast<std::streamsize>(len)) throw DataError("truncated payload in checkpoint name");
        CheckpointEntry e;
        const auto rank = io::read_u32(is, "checkpoint rank");
        for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(io::read_u32(is, "checkpoint extent"));
        e.values = io::read_f32_array(is, element_count(e.shape), "checkpoint values");
        if (!out.emplace(name, std::move(e)).second) throw DataError("duplicate parameter " + name + " in checkpoint");
    }
    return out;
}

void load_into(const std::map<std::string, CheckpointEntry>& ckpt, ParamSet& params)
{
    for (auto& [name, t] : params) {
        auto it = ckpt.find(name);
        if (it == ckpt.end()) throw DataError("checkpoint is missing parameter " + name);
        if (it->second.shape != t.shape())
            throw DataError("checkpoint parameter " + name + " has shape " + to_string(it->second.shape) +
                            ", expected " + to_string(t.shape()));
        auto d = t.mutable_data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = it->second.values[i];
    }
}

} // namespace tomodet::diff
