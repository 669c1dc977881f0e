"""Behavioral ransomware classification from sandbox traces."""

__version__ = "0.1.0"

from .errors import TraceclsError
from .evaluation import (
    ClassifierConfig,
    EvalReport,
    RocCurve,
    SplitSpec,
    cross_validate,
    leave_one_family_out,
    leave_one_family_out_table,
    majority_vote,
    rates,
    repeated_split_eval,
    roc_and_auc,
)
from .featurize import BinaryDataset, FeatureVocabulary, fit_vocabulary, transform
from .ingest import BehavioralReport, load_corpus, parse_report, serialize_report
from .models import (
    LogRegModel,
    NbModel,
    SvmModel,
    logreg_cost,
    logreg_predict,
    logreg_train,
    logreg_update_online,
    nb_predict,
    nb_train,
    sigmoid,
    svm_score,
    svm_train,
)
from .select import MiRanking, mutual_information, rank_features, select_top
from .synth import SynthConfig, generate
