#include "bln/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace bln {

namespace {

constexpr const char* kMagic = "batchless-checkpoint";
constexpr int kVersion = 1;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_values(std::ostream& out, const char* key, const std::vector<double>& v) {
    out << key;
    for (double x : v) out << ' ' << fmt(x);
    out << '\n';
}

const char* mode_name(SigmaMode m) {
    switch (m) {
        case SigmaMode::direct: return "direct";
        case SigmaMode::log: return "log";
        case SigmaMode::inverse: return "inverse";
    }
    return "?";
}

const char* sharing_name(Sharing s) {
    return s == Sharing::per_feature ? "per-feature" : "per-channel";
}

struct Reader {
    std::ifstream in;
    std::string path;
    int lineno = 0;

    explicit Reader(const std::string& p) : in(p), path(p) {
        if (!in) throw CheckpointError("cannot open " + p);
    }

    std::istringstream expect(const std::string& key) {
        std::string line;
        if (!std::getline(in, line))
            throw CheckpointError(path + ": unexpected end of file, wanted '" + key + "'");
        ++lineno;
        std::istringstream ss(line);
        std::string head;
        ss >> head;
        if (head != key)
            throw CheckpointError(path + ":" + std::to_string(lineno) + ": expected '" + key +
                                  "', got '" + head + "'");
        return ss;
    }

    std::vector<double> values_line(const std::string& key, std::size_t count) {
        std::istringstream ss = expect(key);
        std::vector<double> v(count);
        for (std::size_t i = 0; i < count; ++i)
            if (!(ss >> v[i]))
                throw CheckpointError(path + ":" + std::to_string(lineno) +
                                      ": short value list for '" + key + "'");
        return v;
    }
};

double dropout_rate_of(const Model& m) {
    for (const LayerSpec& l : m.layers)
        if (l.kind == LayerKind::dropout) return l.rate;
    return 0.0;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw CheckpointError("cannot write " + path);
    out << kMagic << ' ' << kVersion << '\n';
    out << "arch " << to_string(model.arch) << '\n';
    out << "norm " << to_string(model.norm_kind) << '\n';
    out << "seed " << model.seed << '\n';
    out << "classes " << model.n_classes << '\n';
    out << "input-shape";
    for (std::size_t d : model.input_shape) out << ' ' << d;
    out << '\n';
    out << "lambda " << fmt(model.lambda) << '\n';
    out << "weight-decay " << fmt(model.weight_decay) << '\n';
    out << "dropout " << fmt(dropout_rate_of(model)) << '\n';
    out << "narrow-init " << (model.narrow_init ? 1 : 0) << '\n';

    out << "params " << model.params.size() << '\n';
    for (const Param& p : model.params) {
        out << "param " << p.name << ' ' << (p.decay ? "decay" : "nodecay") << ' '
            << (p.is_norm ? "norm" : "plain") << ' ' << (p.is_stat ? "stat" : "nonstat") << '\n';
        out << "shape";
        for (std::size_t d : p.shape) out << ' ' << d;
        out << '\n';
        write_values(out, "values", p.value);
    }

    std::size_t n_norm = 0;
    for (const LayerSpec& l : model.layers)
        if (l.kind == LayerKind::norm) ++n_norm;
    out << "norm-layers " << n_norm << '\n';
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const LayerSpec& l = model.layers[li];
        if (l.kind != LayerKind::norm) continue;
        out << "norm-layer " << li << " kind " << to_string(l.norm);
        if (is_batchless(l.norm)) out << " mode " << mode_name(sigma_mode_of(l.norm));
        out << " sharing " << sharing_name(l.sharing) << " units " << l.units << '\n';
        if (!is_batchless(l.norm)) {
            const BatchNormState& st = model.bn_states[model.bn_index[li]];
            out << "bn-state eps " << fmt(st.epsilon) << " momentum " << fmt(st.momentum)
                << " rmax " << fmt(st.r_max) << " dmax " << fmt(st.d_max) << " finalized "
                << (st.finalized ? 1 : 0) << '\n';
            write_values(out, "moving-mu", st.moving_mu);
            write_values(out, "moving-var", st.moving_var);
            if (st.finalized) {
                write_values(out, "population-mu", st.population_mu);
                write_values(out, "population-var", st.population_var);
            }
        }
    }
    out << "end\n";
    if (!out) throw CheckpointError("write failure on " + path);
}

Model load_checkpoint(const std::string& path) {
    Reader r(path);
    {
        std::istringstream ss = r.expect(kMagic);
        int ver = 0;
        ss >> ver;
        if (ver != kVersion)
            throw CheckpointError(path + ": unsupported version " + std::to_string(ver));
    }
    std::string arch_s, norm_s;
    r.expect("arch") >> arch_s;
    r.expect("norm") >> norm_s;
    std::uint64_t seed;
    r.expect("seed") >> seed;
    std::size_t classes;
    r.expect("classes") >> classes;
    {
        std::istringstream ss = r.expect("input-shape");
        std::size_t d;
        while (ss >> d) {
        }
    }
    double lambda, wdecay, drop;
    int halfw;
    r.expect("lambda") >> lambda;
    r.expect("weight-decay") >> wdecay;
    r.expect("dropout") >> drop;
    r.expect("narrow-init") >> halfw;

    BuildOptions opts;
    opts.dropout_rate = drop;
    opts.lambda = lambda;
    opts.narrow_init = halfw != 0;
    const Arch arch = arch_from_string(arch_s);
    const NormKind norm = norm_kind_from_string(norm_s);
    Model m = arch == Arch::spiral_mlp ? build_spiral_mlp(norm, seed, opts)
                                       : build_cifar_cnn(norm, seed, opts);
    if (m.n_classes != classes) throw CheckpointError(path + ": class count mismatch");
    m.weight_decay = wdecay;

    std::size_t n_params;
    r.expect("params") >> n_params;
    if (n_params != m.params.size())
        throw CheckpointError(path + ": parameter count mismatch (" + std::to_string(n_params) +
                              " vs " + std::to_string(m.params.size()) + ")");
    for (std::size_t i = 0; i < n_params; ++i) {
        std::string name;
        r.expect("param") >> name;
        if (name != m.params[i].name)
            throw CheckpointError(path + ": parameter '" + name + "' where '" +
                                  m.params[i].name + "' was expected");
        std::istringstream ss = r.expect("shape");
        Shape shape;
        std::size_t d;
        while (ss >> d) shape.push_back(d);
        if (shape != m.params[i].shape)
            throw CheckpointError(path + ": shape mismatch for " + name);
        m.params[i].value = r.values_line("values", numel(shape));
    }

    std::size_t n_norm;
    r.expect("norm-layers") >> n_norm;
    for (std::size_t i = 0; i < n_norm; ++i) {
        std::istringstream ss = r.expect("norm-layer");
        std::size_t li;
        ss >> li;
        if (li >= m.layers.size() || m.layers[li].kind != LayerKind::norm)
            throw CheckpointError(path + ": norm-layer index " + std::to_string(li) +
                                  " does not name a norm layer");
        if (!is_batchless(m.layers[li].norm)) {
            BatchNormState& st = m.bn_states[m.bn_index[li]];
            std::istringstream bs = r.expect("bn-state");
            std::string key;
            int finalized = 0;
            while (bs >> key) {
                if (key == "eps") bs >> st.epsilon;
                else if (key == "momentum") bs >> st.momentum;
                else if (key == "rmax") bs >> st.r_max;
                else if (key == "dmax") bs >> st.d_max;
                else if (key == "finalized") bs >> finalized;
            }
            const std::size_t u = m.layers[li].units;
            st.moving_mu = r.values_line("moving-mu", u);
            st.moving_var = r.values_line("moving-var", u);
            st.finalized = finalized != 0;
            if (st.finalized) {
                st.population_mu = r.values_line("population-mu", u);
                st.population_var = r.values_line("population-var", u);
            }
        }
    }
    r.expect("end");
    return m;
}

}  // namespace bln
