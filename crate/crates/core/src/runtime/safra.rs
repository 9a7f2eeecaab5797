//! Safra's token-ring termination detection over simulated processes.
//!
//! Each process keeps a message counter (sends minus receives) and a color.
//! Receiving a message turns a process black. Process 0 starts a wave by
//! sending a white token with count 0 to process `n - 1`; each passive holder
//! adds its counter, blackens the token if it is black itself, turns white and
//! passes the token to `rank - 1`. Back at process 0 the wave succeeds when
//! the token and process 0 are white and the total count is zero.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub count: i64,
    pub black: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SafraAction {
    /// Nothing to do (active, or not holding the token).
    Hold,
    Forward {
        to: usize,
        token: Token,
    },
    Terminate,
}

#[derive(Clone, Debug)]
pub struct SafraNode {
    rank: usize,
    size: usize,
    counter: i64,
    black: bool,
    token: Option<Token>,
    wave_out: bool,
    waves: u64,
}

impl SafraNode {
    pub fn new(rank: usize, size: usize) -> Self {
        assert!(rank < size);
        Self {
            rank,
            size,
            counter: 0,
            black: false,
            token: None,
            wave_out: false,
            waves: 0,
        }
    }

    pub fn on_send(&mut self) {
        self.counter += 1;
    }

    pub fn on_receive(&mut self) {
        self.counter -= 1;
        self.black = true;
    }

    pub fn receive_token(&mut self, token: Token) {
        debug_assert!(self.token.is_none(), "two tokens in the ring");
        self.token = Some(token);
    }

    pub fn counter(&self) -> i64 {
        self.counter
    }

    pub fn is_black(&self) -> bool {
        self.black
    }

    pub fn holds_token(&self) -> bool {
        self.token.is_some()
    }

    /// Waves started so far (initiator only).
    pub fn waves(&self) -> u64 {
        self.waves
    }

    pub fn step(&mut self, passive: bool) -> SafraAction {
        if !passive {
            return SafraAction::Hold;
        }
        if self.rank != 0 {
            return match self.token.take() {
                Some(t) => {
                    let token = Token {
                        count: t.count + self.counter,
                        black: t.black || self.black,
                    };
                    self.black = false;
                    SafraAction::Forward {
                        to: self.rank - 1,
                        token,
                    }
                }
                None => SafraAction::Hold,
            };
        }
        if self.wave_out {
            let Some(t) = self.token.take() else {
                return SafraAction::Hold;
            };
            self.wave_out = false;
            if !t.black && !self.black && t.count + self.counter == 0 {
                return SafraAction::Terminate;
            }
        }
        self.start_wave()
    }

    fn start_wave(&mut self) -> SafraAction {
        self.waves += 1;
        self.black = false;
        if self.size == 1 {
            return if self.counter == 0 {
                SafraAction::Terminate
            } else {
                SafraAction::Hold
            };
        }
        self.wave_out = true;
        SafraAction::Forward {
            to: self.size - 1,
            token: Token {
                count: 0,
                black: false,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pass(nodes: &mut [SafraNode], action: SafraAction) -> Option<usize> {
        match action {
            SafraAction::Forward { to, token } => {
                nodes[to].receive_token(token);
                Some(to)
            }
            _ => None,
        }
    }

    #[test]
    fn single_passive_process_terminates_at_once() {
        let mut n = SafraNode::new(0, 1);
        assert_eq!(n.step(true), SafraAction::Terminate);
    }

    #[test]
    fn active_processes_hold_the_token() {
        let mut n = SafraNode::new(0, 2);
        assert_eq!(n.step(false), SafraAction::Hold);
    }

    #[test]
    fn quiet_ring_terminates_in_one_wave() {
        let mut nodes: Vec<_> = (0..3).map(|r| SafraNode::new(r, 3)).collect();
        let a = nodes[0].step(true);
        assert_eq!(pass(&mut nodes, a), Some(2));
        let a = nodes[2].step(true);
        assert_eq!(pass(&mut nodes, a), Some(1));
        let a = nodes[1].step(true);
        assert_eq!(pass(&mut nodes, a), Some(0));
        assert_eq!(nodes[0].step(true), SafraAction::Terminate);
        assert_eq!(nodes[0].waves(), 1);
    }

    #[test]
    fn reactivation_behind_the_token_forces_more_waves() {
        let mut nodes: Vec<_> = (0..3).map(|r| SafraNode::new(r, 3)).collect();
        // wave 1: the token passes process 2 while it is passive
        let a = nodes[0].step(true);
        pass(&mut nodes, a);
        let a = nodes[2].step(true);
        pass(&mut nodes, a);
        // process 1, still active, sends to process 2, which wakes up
        assert_eq!(nodes[1].step(false), SafraAction::Hold);
        nodes[1].on_send();
        nodes[2].on_receive();
        let a = nodes[1].step(true);
        match a {
            SafraAction::Forward { token, .. } => assert_eq!(token.count, 1),
            other => panic!("{other:?}"),
        }
        pass(&mut nodes, a);
        // count is unbalanced, so the initiator starts wave 2
        let a = nodes[0].step(true);
        assert_eq!(nodes[0].waves(), 2);
        pass(&mut nodes, a);
        // process 2 received a message: the token turns black
        let a = nodes[2].step(true);
        match a {
            SafraAction::Forward { token, .. } => assert!(token.black),
            other => panic!("{other:?}"),
        }
        pass(&mut nodes, a);
        let a = nodes[1].step(true);
        pass(&mut nodes, a);
        let a = nodes[0].step(true);
        assert_eq!(nodes[0].waves(), 3);
        pass(&mut nodes, a);
        for r in [2, 1] {
            let a = nodes[r].step(true);
            pass(&mut nodes, a);
        }
        assert_eq!(nodes[0].step(true), SafraAction::Terminate);
    }
}
