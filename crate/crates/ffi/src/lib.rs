//! C ABI over the `mlspike` engine.
//!
//! Networks are opaque handles created by `mlspike_network_new` and released
//! with `mlspike_network_free`. Every fallible call returns an
//! [`MlspikeStatus`]; on failure a message is available from
//! `mlspike_last_error_message` on the same thread until the next failing call.
//!
//! Spike trains cross the boundary as [`MlspikeTrains`]: one flat array of
//! spike times in ms plus the length of every train.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::atomic::AtomicBool;

use mlspike::harness::{emit, resolve_config, run_experiment, ExperimentId, Overrides};
use mlspike::learning::{apply_episode_learning, LearningRates, LearningSetup, Rule};
use mlspike::metrics::{vrd, vrd_spatio, VrdParams};
use mlspike::network::{LayeredNetwork, NetworkConfig, OutputWeights, Variant};
use mlspike::{Error, SpikeTrain};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlspikeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Infeasible = 4,
    Io = 5,
    Format = 6,
    BufferTooSmall = 7,
    Interrupted = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlspikeVariant {
    Free = 0,
    FixedHidden = 1,
    SingleLayer = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlspikeRule {
    Backprop = 0,
    Bio = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlspikeLayer {
    /// `n_h x n_i` input-to-hidden weights.
    Hidden = 0,
    /// `n_o x n_h` (or `n_o x n_i` for single-layer) output weights.
    Output = 1,
}

/// Borrowed view of several spike trains. Train `k` occupies
/// `times[sum(lengths[..k]) .. sum(lengths[..=k])]`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MlspikeTrains {
    pub times: *const f64,
    pub lengths: *const usize,
    pub n_trains: usize,
}

/// Opaque network handle owning its weights, learning setup and RNG.
pub struct MlspikeNetwork {
    net: LayeredNetwork,
    setup: LearningSetup,
    rng: ChaCha8Rng,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    let c = CString::new(text).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn fail(status: MlspikeStatus, msg: impl Into<String>) -> MlspikeStatus {
    set_last_error(msg);
    status
}

fn status_of(err: &Error) -> MlspikeStatus {
    match err {
        Error::Config(_) => MlspikeStatus::Config,
        Error::Infeasible { .. } => MlspikeStatus::Infeasible,
        Error::Io { .. } => MlspikeStatus::Io,
        Error::Format(_) => MlspikeStatus::Format,
    }
}

/// Runs `body`, mapping engine errors and panics to status codes.
fn guard(body: impl FnOnce() -> Result<(), MlspikeStatus>) -> MlspikeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => MlspikeStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(MlspikeStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn engine<T>(r: mlspike::Result<T>) -> Result<T, MlspikeStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), MlspikeStatus> {
    if p.is_null() {
        Err(fail(MlspikeStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, MlspikeStatus> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            MlspikeStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

unsafe fn read_times(times: *const f64, n: usize, what: &str) -> Result<SpikeTrain, MlspikeStatus> {
    if n == 0 {
        return Ok(SpikeTrain::new());
    }
    non_null(times, what)?;
    let slice = std::slice::from_raw_parts(times, n);
    if slice.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(fail(
            MlspikeStatus::InvalidArgument,
            format!("{what} holds a negative or non-finite time"),
        ));
    }
    Ok(SpikeTrain::from_times(slice.to_vec()))
}

unsafe fn read_trains(
    view: *const MlspikeTrains,
    what: &str,
) -> Result<Vec<SpikeTrain>, MlspikeStatus> {
    non_null(view, what)?;
    let v = &*view;
    if v.n_trains == 0 {
        return Ok(Vec::new());
    }
    non_null(v.lengths, what)?;
    let lengths = std::slice::from_raw_parts(v.lengths, v.n_trains);
    let mut offset = 0usize;
    let mut out = Vec::with_capacity(v.n_trains);
    for &len in lengths {
        let start = if v.times.is_null() {
            v.times
        } else {
            v.times.add(offset)
        };
        out.push(read_times(start, len, what)?);
        offset += len;
    }
    Ok(out)
}

fn variant_of(v: MlspikeVariant) -> Variant {
    match v {
        MlspikeVariant::Free => Variant::Free,
        MlspikeVariant::FixedHidden => Variant::FixedHidden,
        MlspikeVariant::SingleLayer => Variant::SingleLayer,
    }
}

fn rule_of(r: MlspikeRule) -> Rule {
    match r {
        MlspikeRule::Backprop => Rule::Backprop,
        MlspikeRule::Bio => Rule::Bio,
    }
}

fn setup_for(net: &LayeredNetwork, rule: Rule, n_s: usize) -> LearningSetup {
    let c = &net.config;
    LearningSetup::new(rule, LearningRates::new(c.n_i, c.n_h, c.n_o, n_s))
}

/// Message for the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mlspike_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a freshly initialized network. `n_s` (target spikes per output)
/// sets the hidden learning rate. The bio rule on a multilayer network uses
/// equal positive output weights.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn mlspike_network_new(
    n_i: usize,
    n_h: usize,
    n_o: usize,
    variant: MlspikeVariant,
    rule: MlspikeRule,
    n_s: usize,
    seed: u64,
    out: *mut *mut MlspikeNetwork,
) -> MlspikeStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let variant = variant_of(variant);
        let rule = rule_of(rule);
        let mut config = NetworkConfig::new(n_i, n_h, n_o, variant);
        if rule == Rule::Bio && variant.is_multilayer() {
            config = config.with_output_weights(OutputWeights::PositiveEqual);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = engine(LayeredNetwork::initialize(config, &mut rng))?;
        let setup = setup_for(&net, rule, n_s);
        *out = Box::into_raw(Box::new(MlspikeNetwork { net, setup, rng }));
        Ok(())
    })
}

/// Restores a network from its JSON form with a fresh RNG.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mlspike_network_from_json(
    json: *const c_char,
    rule: MlspikeRule,
    n_s: usize,
    seed: u64,
    out: *mut *mut MlspikeNetwork,
) -> MlspikeStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let text = read_str(json, "json")?;
        let net = engine(LayeredNetwork::from_json(text))?;
        engine(net.check_invariants())?;
        let setup = setup_for(&net, rule_of(rule), n_s);
        let rng = ChaCha8Rng::seed_from_u64(seed);
        *out = Box::into_raw(Box::new(MlspikeNetwork { net, setup, rng }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mlspike_network_free(net: *mut MlspikeNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Writes the layer sizes. Any output pointer may be null.
///
/// # Safety
/// `net` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mlspike_network_dims(
    net: *const MlspikeNetwork,
    n_i: *mut usize,
    n_h: *mut usize,
    n_o: *mut usize,
) -> MlspikeStatus {
    guard(|| {
        non_null(net, "net")?;
        let c = &(*net).net.config;
        for (p, v) in [(n_i, c.n_i), (n_h, c.n_h), (n_o, c.n_o)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies one weight matrix, row-major, into `buf`. `required` receives the
/// element count; with `capacity` too small nothing is copied and
/// `BufferTooSmall` is returned.
///
/// # Safety
/// `net` must be live; `buf` must hold `capacity` doubles; `required` writable.
#[no_mangle]
pub unsafe extern "C" fn mlspike_network_weights(
    net: *const MlspikeNetwork,
    layer: MlspikeLayer,
    buf: *mut f64,
    capacity: usize,
    required: *mut usize,
) -> MlspikeStatus {
    guard(|| {
        non_null(net, "net")?;
        non_null(required, "required")?;
        let n = &(*net).net;
        let m = match layer {
            MlspikeLayer::Hidden => &n.w_hi,
            MlspikeLayer::Output => &n.w_oh,
        };
        let data = m.as_slice();
        *required = data.len();
        if data.is_empty() {
            return Ok(());
        }
        if capacity < data.len() {
            return Err(fail(
                MlspikeStatus::BufferTooSmall,
                format!("need {} doubles, got {capacity}", data.len()),
            ));
        }
        non_null(buf, "buf")?;
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// Simulates one episode without learning and writes the output spike times
/// (flat, train after train) and per-output counts.
///
/// # Safety
/// `net` and `input` must be valid; `times` must hold `capacity` doubles,
/// `lengths` must hold `n_o` entries and `required` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mlspike_network_simulate(
    net: *mut MlspikeNetwork,
    input: *const MlspikeTrains,
    times: *mut f64,
    capacity: usize,
    lengths: *mut usize,
    required: *mut usize,
) -> MlspikeStatus {
    guard(|| {
        non_null(net, "net")?;
        non_null(lengths, "lengths")?;
        non_null(required, "required")?;
        let input = read_trains(input, "input")?;
        let h = &mut *net;
        let rec = engine(h.net.simulate_episode(&input, &mut h.rng))?;
        let total: usize = rec.output_trains.iter().map(SpikeTrain::len).sum();
        *required = total;
        for (o, t) in rec.output_trains.iter().enumerate() {
            *lengths.add(o) = t.len();
        }
        if capacity < total {
            return Err(fail(
                MlspikeStatus::BufferTooSmall,
                format!("need {total} doubles, got {capacity}"),
            ));
        }
        if total > 0 {
            non_null(times, "times")?;
        }
        let mut k = 0;
        for t in &rec.output_trains {
            for &s in t.times() {
                *times.add(k) = s;
                k += 1;
            }
        }
        Ok(())
    })
}

/// Simulates one episode, applies the configured learning rule and writes
/// the summed van Rossum distance between actual and target outputs
/// (`tau_c` = 10 ms) to `distance` when it is non-null.
///
/// # Safety
/// `net`, `input` and `target` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mlspike_network_train_episode(
    net: *mut MlspikeNetwork,
    input: *const MlspikeTrains,
    target: *const MlspikeTrains,
    distance: *mut f64,
) -> MlspikeStatus {
    guard(|| {
        non_null(net, "net")?;
        let input = read_trains(input, "input")?;
        let target = read_trains(target, "target")?;
        let h = &mut *net;
        let rec = engine(h.net.simulate_episode(&input, &mut h.rng))?;
        engine(apply_episode_learning(&mut h.net, &rec, &target, &h.setup))?;
        if !distance.is_null() {
            *distance = engine(vrd_spatio(
                &rec.output_trains,
                &target,
                &VrdParams::default(),
            ))?;
        }
        Ok(())
    })
}

/// Serializes the network to JSON. Release the string with
/// `mlspike_string_free`.
///
/// # Safety
/// `net` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mlspike_network_to_json(
    net: *const MlspikeNetwork,
    out: *mut *mut c_char,
) -> MlspikeStatus {
    guard(|| {
        non_null(net, "net")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let text = engine((*net).net.to_json())?;
        let c = CString::new(text).map_err(|e| fail(MlspikeStatus::Format, e.to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mlspike_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Van Rossum distance between two spike trains.
///
/// # Safety
/// `a` must hold `n_a` doubles and `b` must hold `n_b` (either may be null
/// when its count is zero); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mlspike_vrd(
    a: *const f64,
    n_a: usize,
    b: *const f64,
    n_b: usize,
    tau_c: f64,
    out: *mut f64,
) -> MlspikeStatus {
    guard(|| {
        non_null(out, "out")?;
        let params = VrdParams { tau_c };
        engine(params.validate())?;
        let a = read_times(a, n_a, "a")?;
        let b = read_times(b, n_b, "b")?;
        *out = vrd(&a, &b, &params);
        Ok(())
    })
}

/// Runs an experiment preset (optionally merged with a TOML file) and writes
/// curves, summary and manifest under `out_dir`. `seed` < 0 and `runs` = 0
/// keep the configured values.
///
/// # Safety
/// `experiment` and `out_dir` must be NUL-terminated strings; `config_path`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn mlspike_run_experiment(
    experiment: *const c_char,
    config_path: *const c_char,
    out_dir: *const c_char,
    seed: i64,
    runs: usize,
) -> MlspikeStatus {
    guard(|| {
        let id: ExperimentId = engine(read_str(experiment, "experiment")?.parse())?;
        let out_dir = PathBuf::from(read_str(out_dir, "out_dir")?);
        let config = if config_path.is_null() {
            None
        } else {
            Some(PathBuf::from(read_str(config_path, "config_path")?))
        };
        let overrides = Overrides {
            config,
            seed: u64::try_from(seed).ok(),
            runs: (runs > 0).then_some(runs),
            ..Overrides::default()
        };
        let cfg = engine(resolve_config(id, &overrides))?;
        let stop = AtomicBool::new(false);
        let result = engine(run_experiment(&cfg, &stop))?;
        engine(emit(&result, &out_dir))?;
        if result.interrupted {
            return Err(fail(MlspikeStatus::Interrupted, "experiment interrupted"));
        }
        Ok(())
    })
}
