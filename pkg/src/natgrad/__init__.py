"""Second-order optimization toolkit: meta-learned damped-preconditioned
natural-gradient training, classic Hessian-Free and first-order
baselines, and a reproducible experiment harness."""

from .autodiff import Graph, GraphBuilder, NonFiniteError, ShapeError, Var
from .controllers import (ControllerOutput, CoordinateStates, LstmMetaParams,
                          controller_init, controller_step)
from .checkpoint import (CheckpointError, load_checkpoint, load_meta_params,
                         save_checkpoint, save_meta_params)
from .curvature import CurvatureOperator, LossHessian, dense_ggn, ggn_vp, hl_apply
from .datasets import BatchSampler, Dataset, blobs, load_dataset, spirals
from .meta import (MetaOptimizerState, MetaTrainer, ReplayBuffer, RolloutTrace,
                   loss_lp, loss_ls, meta_gradients, meta_update, rollout)
from .models import (LossKind, MODEL_ZOO, ModelSpec, ParamKind, ParamSet,
                     build_model, forward_loss, mini_convnet_spec,
                     mini_resnet_spec, mlp_spec)
from .optimizers import (Adam, DivergenceError, FirstOrderTrainer, HfOptimizer,
                         LmDampingState, MlhfOptimizer, RmsProp, SgdM)
from .pcg import DiagonalPreconditioner, PCGResult, pcg

__version__ = "0.1.0"
