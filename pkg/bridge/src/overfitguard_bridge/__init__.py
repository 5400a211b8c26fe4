"""Training-loop adapter around a spawned ``overfitguard monitor`` process.

The bridge owns the child process and speaks its newline-delimited JSON
protocol: one ``{"epoch", "value"}`` record out per epoch, one
``{"action": ...}`` record back. It deliberately never imports the main
package; the protocol is the only contract.
"""

from .bridge import BridgeConfig, BridgeDecision, BridgeError, CallbackBridge

__all__ = ["BridgeConfig", "BridgeDecision", "BridgeError", "CallbackBridge"]
__version__ = "0.1.0"
