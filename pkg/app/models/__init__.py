from app.models.image import GrayImage, GradientField, LineSegment2D, LineSupportRegion
from app.models.geometry import CameraModel, OrthonormalLine, Plane, PluckerLine, Pose
from app.models.matching import BandDescriptor, LineMatch
from app.models.window import KeyframeState, Observation, PointLandmark, WindowState
from app.models.scene import SyntheticScene, Trajectory
from app.models.experiment_run import ExperimentRun
