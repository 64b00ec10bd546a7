from mtecache.nn import tensor as T

BCE_EPS = 1e-7


def mse_loss(pred, target):
    diff = T.as_tensor(pred) - T.as_tensor(target)
    return (diff * diff).mean()


def bce_loss(pred, target, eps=BCE_EPS):
    """Mean binary cross-entropy; predictions are clamped to ``[eps, 1 - eps]``."""
    p = T.clip(T.as_tensor(pred), eps, 1.0 - eps)
    t = T.as_tensor(target)
    ll = t * T.log(p) + (1.0 - t) * T.log(1.0 - p)
    return -ll.mean()
