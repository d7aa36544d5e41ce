//! The simulated receiver and the thread that owns it.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::ThreadId;
use std::time::Duration;

use crossbeam_channel::{select, tick, Receiver, Sender};

use dabxml_core::dabml::{is_plain_file_name, Action, ReceiverStatus, Recording, MAX_VOLUME};

use crate::config::{DefaultTuning, EnsembleConfig};
use crate::events::{ServerEvent, TimedEvent};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiverState {
    pub ensemble_label: String,
    pub selected_subchannel: u8,
    pub volume: u32,
    pub afc_offset: i32,
    pub recording: Option<(u8, String)>,
    pub audio_muted: bool,
}

impl ReceiverState {
    pub fn status(&self) -> ReceiverStatus {
        ReceiverStatus {
            ensemble: self.ensemble_label.clone(),
            subchannel: self.selected_subchannel.into(),
            volume: self.volume,
            afc_offset: self.afc_offset,
            recording: self
                .recording
                .as_ref()
                .map(|(subchannel, destination)| Recording { subchannel: (*subchannel).into(), destination: destination.clone() }),
            muted: self.audio_muted,
        }
    }
}

/// Counts receiver mutations and notes any made off the owning thread.
#[derive(Debug, Default)]
pub struct MutationAudit {
    owner: Mutex<Option<ThreadId>>,
    mutations: AtomicU64,
    foreign: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditCounts {
    pub mutations: u64,
    pub foreign: u64,
}

impl MutationAudit {
    pub fn claim(&self) {
        *self.owner.lock().unwrap() = Some(std::thread::current().id());
    }

    fn record(&self) {
        self.mutations.fetch_add(1, Ordering::Relaxed);
        if *self.owner.lock().unwrap() != Some(std::thread::current().id()) {
            self.foreign.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn counts(&self) -> AuditCounts {
        AuditCounts { mutations: self.mutations.load(Ordering::Relaxed), foreign: self.foreign.load(Ordering::Relaxed) }
    }
}

#[derive(Debug)]
pub struct SimulatedReceiver {
    state: ReceiverState,
    ensembles: BTreeMap<String, EnsembleConfig>,
    audit: Arc<MutationAudit>,
}

impl SimulatedReceiver {
    /// Powers up untuned: first configured ensemble, lowest subchannel,
    /// volume 0. [`Self::apply_defaults`] performs the start-up tuning.
    pub fn new(ensembles: &[EnsembleConfig], afc_drift: i32, audit: Arc<MutationAudit>) -> Self {
        let first = &ensembles[0];
        let state = ReceiverState {
            ensemble_label: first.label.clone(),
            selected_subchannel: *first.subchannels.first().expect("ensemble has subchannels"),
            volume: 0,
            afc_offset: afc_drift,
            recording: None,
            audio_muted: true,
        };
        let ensembles = ensembles.iter().map(|e| (e.label.clone(), e.clone())).collect();
        Self { state, ensembles, audit }
    }

    pub fn state(&self) -> &ReceiverState {
        &self.state
    }

    pub fn apply_defaults(&mut self, defaults: &DefaultTuning) -> Result<(), String> {
        self.apply(&Action::TuneEnsemble(defaults.ensemble.clone()))?;
        self.apply(&Action::SelectSubchannel(defaults.subchannel.into()))?;
        self.apply(&Action::SetVolume(defaults.volume))
    }

    fn current_has(&self, subchannel: u32) -> bool {
        u8::try_from(subchannel).is_ok_and(|id| self.ensembles[&self.state.ensemble_label].subchannels.contains(&id))
    }

    /// Applies one action. On error the state is untouched.
    pub fn apply(&mut self, action: &Action) -> Result<(), String> {
        let mut next = self.state.clone();
        match action {
            Action::SetVolume(level) => {
                if *level > MAX_VOLUME {
                    return Err(format!("volume {level} exceeds {MAX_VOLUME}"));
                }
                next.volume = *level;
                next.audio_muted = *level == 0;
            }
            Action::SelectSubchannel(id) => {
                if !self.current_has(*id) {
                    return Err(format!("subchannel {id} is not in ensemble {:?}", self.state.ensemble_label));
                }
                next.selected_subchannel = *id as u8;
            }
            Action::TuneEnsemble(label) => {
                let ensemble = self.ensembles.get(label).ok_or_else(|| format!("unknown ensemble {label:?}"))?;
                next.ensemble_label = label.clone();
                if !ensemble.subchannels.contains(&next.selected_subchannel) {
                    next.selected_subchannel = *ensemble.subchannels.first().expect("ensemble has subchannels");
                }
                if next.recording.as_ref().is_some_and(|(sub, _)| !ensemble.subchannels.contains(sub)) {
                    next.recording = None;
                }
            }
            Action::RecordStart { subchannel, destination } => {
                if !self.current_has(*subchannel) {
                    return Err(format!("subchannel {subchannel} is not in ensemble {:?}", self.state.ensemble_label));
                }
                if !is_plain_file_name(destination) {
                    return Err(format!("{destination:?} is not a plain file name"));
                }
                next.recording = Some((*subchannel as u8, destination.clone()));
            }
            Action::RecordStop => next.recording = None,
            Action::AfcAdjust(delta) => next.afc_offset = next.afc_offset.saturating_add(*delta),
        }
        self.commit(next);
        Ok(())
    }

    /// One step of frequency correction: a tenth of the offset, at least one
    /// unit, toward zero. Returns whether anything changed.
    pub fn afc_tick(&mut self) -> bool {
        let offset = self.state.afc_offset;
        if offset == 0 {
            return false;
        }
        let step = match offset / 10 {
            0 => offset.signum(),
            step => step,
        };
        let mut next = self.state.clone();
        next.afc_offset = offset - step;
        self.commit(next);
        true
    }

    fn commit(&mut self, next: ReceiverState) {
        self.audit.record();
        self.state = next;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HardwareCommand {
    Apply { correlation_id: u64, action: Action },
    Save { correlation_id: u64, destination: String, bytes: Arc<Vec<u8>> },
}

impl HardwareCommand {
    pub fn correlation_id(&self) -> u64 {
        match self {
            HardwareCommand::Apply { correlation_id, .. } | HardwareCommand::Save { correlation_id, .. } => {
                *correlation_id
            }
        }
    }
}

pub(crate) struct HardwareContext {
    pub receiver: SimulatedReceiver,
    pub defaults: DefaultTuning,
    pub output_dir: PathBuf,
    pub afc_tick: Duration,
}

/// The hardware thread body. Exits when the command channel closes.
pub(crate) fn run_hardware(mut ctx: HardwareContext, commands: Receiver<HardwareCommand>, events: Sender<TimedEvent>) {
    ctx.receiver.audit.claim();
    let started = ctx.receiver.apply_defaults(&ctx.defaults);
    let result = ServerEvent::HardwareResult {
        correlation_id: 0,
        command: "startup defaults".into(),
        outcome: started.map(|()| ctx.receiver.state().status()),
    };
    if events.send(TimedEvent::now(result)).is_err() {
        return;
    }
    let ticker = tick(ctx.afc_tick);
    loop {
        let emitted = select! {
            recv(commands) -> cmd => match cmd {
                Ok(cmd) => execute(&mut ctx, cmd),
                Err(_) => return,
            },
            recv(ticker) -> _ => match ctx.receiver.afc_tick() {
                true => vec![ServerEvent::AfcCorrected { status: ctx.receiver.state().status() }],
                false => vec![],
            },
        };
        for event in emitted {
            if events.send(TimedEvent::now(event)).is_err() {
                return;
            }
        }
    }
}

fn execute(ctx: &mut HardwareContext, cmd: HardwareCommand) -> Vec<ServerEvent> {
    match cmd {
        HardwareCommand::Apply { correlation_id, action } => {
            let outcome = ctx.receiver.apply(&action).map(|()| ctx.receiver.state().status());
            vec![ServerEvent::HardwareResult { correlation_id, command: action.to_string(), outcome }]
        }
        HardwareCommand::Save { correlation_id, destination, bytes } => {
            let command = format!("save({destination})");
            let written = if is_plain_file_name(&destination) {
                std::fs::create_dir_all(&ctx.output_dir)
                    .and_then(|()| std::fs::write(ctx.output_dir.join(&destination), bytes.as_slice()))
                    .map_err(|e| e.to_string())
            } else {
                Err(format!("{destination:?} is not a plain file name"))
            };
            match written {
                Ok(()) => vec![
                    ServerEvent::ObjectSaved { destination },
                    ServerEvent::HardwareResult { correlation_id, command, outcome: Ok(ctx.receiver.state().status()) },
                ],
                Err(e) => vec![ServerEvent::HardwareResult { correlation_id, command, outcome: Err(e) }],
            }
        }
    }
}
