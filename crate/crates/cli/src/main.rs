use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hybridcal::epipolar::{epipolar_line, fundamental_from_calibration, RansacConfig};
use hybridcal::geometry::{compose, invert, PixelPoint};
use hybridcal::io::{
    read_correspondence_dir, read_json, to_json, wide_correspondences, write_json, CameraLevel, CorrespondenceFile,
    DescriptorFile, GroundTruthFile, NetworkFile, Origin, PointsFile, PoseFile, SceneFiles,
};
use hybridcal::matching::match_descriptors;
use hybridcal::rig_network::{calibrate_network, PipelineOptions, RigId};
use hybridcal::synthetic::{evaluate, generate_scene, GroundTruth, SceneConfig};
use hybridcal::{EpipolarError, SchemaError, SyntheticError};

#[derive(Parser)]
#[command(name = "hybridcal", version, about = "Relative pose calibration of hybrid stereo rig networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    /// Analysis (long focal) cameras.
    #[value(name = "s")]
    Analysis,
    /// Wide (short focal) cameras.
    #[value(name = "l")]
    Wide,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate every rig pose from wide-camera correspondences and write a pose file.
    Calibrate {
        #[arg(long)]
        network: PathBuf,
        /// Directory of correspondence files; analysis-level files are ignored.
        #[arg(long)]
        correspondences: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// RANSAC seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// RANSAC inlier threshold in pixels.
        #[arg(long)]
        ransac_threshold: Option<f64>,
        #[arg(long)]
        skip_global_ba: bool,
    },
    /// Render a synthetic scene: network, correspondences and ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print epipolar lines in the second camera for points of the first camera.
    Epilines {
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        network: PathBuf,
        /// Rig pair as `i,j`; points are pixels of rig i.
        #[arg(long, value_parser = parse_pair)]
        pair: (RigId, RigId),
        #[arg(long)]
        points: PathBuf,
        #[arg(long, value_enum, default_value = "s")]
        camera_level: Level,
    },
    /// Compare a pose file with ground truth and print the report as JSON.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
    },
    /// Match two descriptor sets and write a correspondence file.
    Match {
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Uniqueness ratio threshold.
        #[arg(long, default_value_t = 0.8)]
        tau: f64,
    },
}

fn parse_pair(s: &str) -> Result<(RigId, RigId), String> {
    let (a, b) = s.split_once(',').ok_or("expected i,j")?;
    let id = |t: &str| t.trim().parse::<RigId>().map_err(|e| e.to_string());
    Ok((id(a)?, id(b)?))
}

/// Exit 2: unusable input. Exit 3: estimation failed.
enum Failure {
    Input(&'static str, String),
    Estimation(&'static str, String),
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        Failure::Input(e.name(), e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate { network, correspondences, out, seed, ransac_threshold, skip_global_ba } => {
            calibrate(&network, &correspondences, &out, seed, ransac_threshold, skip_global_ba)
        }
        Command::Simulate { config, out, seed } => simulate(&config, &out, seed),
        Command::Epilines { poses, network, pair, points, camera_level } => {
            epilines(&poses, &network, pair, &points, camera_level)
        }
        Command::Evaluate { truth, estimate } => evaluate_cmd(&truth, &estimate),
        Command::Match { descriptors, out, tau } => match_cmd(&descriptors, &out, tau),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(name, msg)) => {
            eprintln!("error: {name}: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Estimation(name, msg)) => {
            eprintln!("error: {name}: {msg}");
            ExitCode::from(3)
        }
    }
}

fn calibrate(
    network: &Path,
    dir: &Path,
    out: &Path,
    seed: u64,
    threshold: Option<f64>,
    skip_global_ba: bool,
) -> Outcome {
    let (network, constraints) = read_json::<NetworkFile>(network)?.to_network()?;
    let files: Vec<CorrespondenceFile> = read_correspondence_dir(dir)?.into_iter().map(|(_, f)| f).collect();
    let corrs = wide_correspondences(&network, &files)?;
    if let Some(&(i, j)) = network.adjacency().iter().find(|p| !corrs.contains_key(p)) {
        return Err(SchemaError::Invalid(format!("no wide correspondences for pair ({i}, {j})")).into());
    }
    let ransac = RansacConfig { seed, threshold: threshold.unwrap_or(RansacConfig::default().threshold), ..Default::default() };
    ransac.validate().map_err(|e| Failure::Input(e.name(), e.to_string()))?;
    let options = PipelineOptions { ransac, global_refine: !skip_global_ba, ..Default::default() };
    let result = calibrate_network(&network, &corrs, &constraints, &options)
        .map_err(|e| Failure::Estimation(e.name(), e.to_string()))?;
    write_json(out, &PoseFile::from_calibration(&result, &network)?)?;
    Ok(())
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Outcome {
    let mut cfg: SceneConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let scene = generate_scene(&cfg).map_err(|e: SyntheticError| Failure::Input(e.name(), e.to_string()))?;
    SceneFiles::from_scene(&scene).write(out)?;
    Ok(())
}

fn epilines(poses: &Path, network: &Path, (i, j): (RigId, RigId), points: &Path, level: Level) -> Outcome {
    let poses: PoseFile = read_json(poses)?;
    let (network, _) = read_json::<NetworkFile>(network)?.to_network()?;
    let points: PointsFile = read_json(points)?;
    let rig = |id| network.rig(id).map_err(|e| Failure::Input(e.name(), e.to_string()));
    let (ri, rj) = (rig(i)?, rig(j)?);
    let (ci, cj, ei, ej) = match level {
        Level::Analysis => (ri.analysis, rj.analysis, poses.analysis_pose(i)?, poses.analysis_pose(j)?),
        Level::Wide => (ri.wide, rj.wide, poses.wide_pose(i)?, poses.wide_pose(j)?),
    };
    let f = fundamental_from_calibration(&ci.k(), &cj.k(), &compose(&ej, &invert(&ei)))
        .map_err(|e| Failure::Estimation(e.name(), e.to_string()))?;
    let mut text = String::new();
    for p in &points.points {
        let line = ci
            .undistort_pixel(&PixelPoint::new(p[0], p[1]))
            .map_err(EpipolarError::from)
            .and_then(|x| epipolar_line(&f, &x));
        match line {
            Ok(l) => text.push_str(&format!("{:.8e} {:.8e} {:.8e}\n", l.x, l.y, l.z)),
            Err(e) => text.push_str(&format!("{}\n", e.name())),
        }
    }
    print!("{text}");
    Ok(())
}

fn evaluate_cmd(truth: &Path, estimate: &Path) -> Outcome {
    let truth = GroundTruth::try_from(&read_json::<GroundTruthFile>(truth)?)?;
    let recovered = read_json::<PoseFile>(estimate)?.to_recovered()?;
    let report = evaluate(&truth, &recovered).map_err(|e| Failure::Input(e.name(), e.to_string()))?;
    print!("{}", to_json(&report)?);
    Ok(())
}

fn match_cmd(descriptors: &Path, out: &Path, tau: f64) -> Outcome {
    let file: DescriptorFile = read_json(descriptors)?;
    let (a, b) = (file.image1.to_set()?, file.image2.to_set()?);
    let corrs = match_descriptors(&a, &b, tau).map_err(|e| match e {
        hybridcal::MatchingError::InvalidTau(_) | hybridcal::MatchingError::Inconsistent(_) => {
            Failure::Input(e.name(), e.to_string())
        }
        _ => Failure::Estimation(e.name(), e.to_string()),
    })?;
    let level = file.level;
    write_json(out, &CorrespondenceFile::new(file.pair, level, Some(Origin::Matched), &corrs))?;
    if level == CameraLevel::Analysis {
        eprintln!("note: analysis-level matches are used for validation only");
    }
    Ok(())
}
